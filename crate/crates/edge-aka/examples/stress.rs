//! Concurrency soak: many devices, shared servers, one clock.
//!
//! Worker threads drive full exchanges against the same mutex-guarded
//! edge and cloud servers while a shared monotonic clock ticks forward.
//! Every run must end in an agreed key; any rejection or key mismatch is
//! reported. Exercises replay-cache pruning, session bookkeeping, and
//! pseudonym pool handling under interleaving.
//!
//! ```bash
//! cargo run --release --example stress
//! ```

use std::time::Instant;

use edge_aka::harness::adversary::battery_topology;
use edge_aka::harness::runner::run_stress;

fn main() {
    let total_runs: u64 = 1_000;
    let workers = 4;

    let mut topology = battery_topology(77);
    // Each run advances the shared clock one second, so the freshness
    // window must span the whole soak.
    topology.freshness_window = u32::try_from(total_runs).unwrap() + 10;

    let start = Instant::now();
    let report = run_stress(&topology, total_runs, workers).expect("topology is well-formed");
    let elapsed = start.elapsed();

    println!(
        "{} runs across {} workers in {:.2} s",
        report.runs,
        workers,
        elapsed.as_secs_f64()
    );
    println!("keys established and matching: {}", report.established);
    if report.failures.is_empty() {
        println!("failures: none");
    } else {
        println!("failures ({}):", report.failures.len());
        for failure in &report.failures {
            println!("  {failure}");
        }
    }
    assert_eq!(report.established, report.runs);
    assert!(report.failures.is_empty());
}
