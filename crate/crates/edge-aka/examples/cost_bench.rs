//! Reproduces the protocol's cost figures with instrumented entities.
//!
//! Every hash evaluation inside a device, edge, or cloud goes through a
//! shared atomic counter, and every wire message knows its accounted bit
//! size (pseudonyms, masked values, proofs, stamps — framing excluded).
//! Run both exchange shapes many times and the per-run numbers never
//! move: 8 hashes / 1344 bits direct, 17 hashes / 2688 bits relayed.
//!
//! ```bash
//! cargo run --release --example cost_bench [--runs N]
//! ```

use std::time::Instant;

use edge_aka::harness::adversary::{battery_topology, DIRECT_SERVICE, RELAY_SERVICE};
use edge_aka::harness::metrics::{emit_csv, emit_text, summarize};
use edge_aka::harness::runner::Runner;
use edge_aka::harness::scenario::OutcomeKind;

fn main() {
    let mut runs = 200u32;
    let args: Vec<String> = std::env::args().collect();
    if let Some(i) = args.iter().position(|a| a == "--runs") {
        runs = args
            .get(i + 1)
            .and_then(|v| v.parse().ok())
            .expect("--runs takes a positive integer");
    }

    let mut runner = Runner::new(&battery_topology(99)).unwrap();

    let start = Instant::now();
    for i in 0..runs {
        // Alternate shapes so interleaving cannot smear the counters.
        let service = if i % 2 == 0 { DIRECT_SERVICE } else { RELAY_SERVICE };
        let outcome = runner.run_auth(0, 0, service);
        assert_eq!(outcome.kind, OutcomeKind::Success, "{}", outcome.detail);
    }
    let elapsed = start.elapsed();

    let report = summarize(runner.costs());
    print!("{}", emit_text(&report));

    println!();
    println!("csv form:");
    print!("{}", emit_csv(&report));

    // Wall-clock numbers depend on the machine; the hash counts above
    // are the portable cost figures.
    println!();
    println!(
        "informational timing: {} mixed runs in {:.1} ms ({:.1} us/run on this machine)",
        runs,
        elapsed.as_secs_f64() * 1e3,
        elapsed.as_secs_f64() * 1e6 / f64::from(runs)
    );
}
