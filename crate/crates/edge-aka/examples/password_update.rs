//! Offline password change: re-masking without re-registration.
//!
//! The stored credential pairs are masked as b = a XOR k(PW). Changing
//! the password only shifts every mask by k(old) XOR k(new) — the
//! underlying credentials, the pseudonyms, and everything the servers
//! hold stay exactly as issued, so no authority or server is contacted
//! and both exchange shapes keep working.
//!
//! ```bash
//! cargo run --example password_update
//! ```

use edge_aka::crypto::xor;
use edge_aka::device::password_key;
use edge_aka::harness::adversary::{battery_topology, DIRECT_SERVICE, RELAY_SERVICE};
use edge_aka::harness::runner::Runner;
use edge_aka::harness::scenario::OutcomeKind;

fn main() {
    // Two devices, two edges, one cloud — the stock demo deployment.
    let topology = battery_topology(42);
    let mut runner = Runner::new(&topology).unwrap();
    let ops_after_enrollment = runner.ta().operations();
    let old_password = "correct horse battery"; // alice/d0's password

    // Record the unmasked credential of every stored pair before the
    // change: a = b XOR k(PW).
    let old_key = password_key("alice", old_password);
    let before: Vec<_> = runner
        .device("alice/d0")
        .unwrap()
        .snapshot()
        .iter()
        .filter(|r| r.kind == "pair")
        .map(|r| xor(&r.digest(1).unwrap(), &old_key))
        .collect();

    println!("authenticating with the original password:");
    let outcome = runner.run_auth(0, 0, DIRECT_SERVICE);
    println!("  direct:  {:?} — {}", outcome.kind, outcome.detail);

    // The update happens entirely on the device.
    runner
        .device_mut("alice/d0")
        .unwrap()
        .update_password("alice", old_password, "battery staple horse")
        .unwrap();
    println!("\npassword updated locally; nobody else was told\n");

    // Every re-masked pair must unmask to the same credential under the
    // new key: b' XOR k(PW') == b XOR k(PW).
    let new_key = password_key("alice", "battery staple horse");
    let after: Vec<_> = runner
        .device("alice/d0")
        .unwrap()
        .snapshot()
        .iter()
        .filter(|r| r.kind == "pair")
        .map(|r| xor(&r.digest(1).unwrap(), &new_key))
        .collect();
    assert_eq!(before, after);
    println!(
        "all {} stored pairs unmask to the same credentials as before",
        after.len()
    );

    // The old password no longer opens the store...
    let outcome = runner.login_device(0, old_password);
    assert_eq!(outcome.kind, OutcomeKind::RejectedBadCredentials);
    println!("login with old password: {:?}", outcome.kind);

    // ...the new one does, and both exchange shapes still run.
    let outcome = runner.login_device(0, "battery staple horse");
    assert_eq!(outcome.kind, OutcomeKind::Success);
    let direct = runner.run_auth(0, 0, DIRECT_SERVICE);
    let relayed = runner.run_auth(0, 0, RELAY_SERVICE);
    println!("direct exchange:  {:?} — {}", direct.kind, direct.detail);
    println!("relayed exchange: {:?} — {}", relayed.kind, relayed.detail);
    assert_eq!(direct.kind, OutcomeKind::Success);
    assert_eq!(relayed.kind, OutcomeKind::Success);

    println!(
        "\nauthority operations since enrollment: {}",
        runner.ta().operations() - ops_after_enrollment
    );
}
