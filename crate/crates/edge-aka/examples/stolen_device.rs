//! What a captured device store is worth without the password.
//!
//! The adversary walks off with a device's entire persistent state —
//! pseudonyms and masked credentials included. Because each credential
//! is XOR-masked with a password-derived key that exists nowhere on
//! disk, every forged start must guess that key; each guess produces a
//! proof the edge checks against the real credential, and fails.
//!
//! ```bash
//! cargo run --example stolen_device
//! ```

use edge_aka::harness::adversary::{battery_topology, DIRECT_SERVICE, RELAY_SERVICE};
use edge_aka::harness::runner::Runner;
use edge_aka::harness::scenario::OutcomeKind;

fn main() {
    let mut runner = Runner::new(&battery_topology(13)).unwrap();

    // Physical capture of alice/d0's storage.
    runner.steal_device(0);
    println!("device store captured: pseudonym pairs and masked credentials\n");

    // The adversary plays the protocol by the book from the stolen
    // state, guessing the masking key fresh on every attempt.
    let (accepted_direct, outcome_direct) = runner
        .forge_with_stolen(0, 0, DIRECT_SERVICE, 100)
        .unwrap();
    println!(
        "100 direct forged starts:  {} accepted ({})",
        accepted_direct, outcome_direct.detail
    );

    let (accepted_relayed, outcome_relayed) = runner
        .forge_with_stolen(0, 0, RELAY_SERVICE, 100)
        .unwrap();
    println!(
        "100 relayed forged starts: {} accepted ({})",
        accepted_relayed, outcome_relayed.detail
    );

    assert_eq!(accepted_direct + accepted_relayed, 0);
    assert_eq!(outcome_direct.kind, OutcomeKind::AllRejected);
    assert_eq!(outcome_relayed.kind, OutcomeKind::AllRejected);

    // Meanwhile the legitimate owner, password in hand, is unaffected.
    let honest = runner.run_auth(0, 0, DIRECT_SERVICE);
    assert_eq!(honest.kind, OutcomeKind::Success);
    println!("\nlegitimate owner still authenticates: {}", honest.detail);
}
