//! Replays a scripted deployment from a JSON scenario file.
//!
//! A scenario file declares a topology (who is registered with whom) and
//! a script of actions — honest exchanges, armed interceptions, replays,
//! clock jumps, password changes — each with an expected outcome. The
//! run is fully deterministic under the topology's seed: same file, same
//! transcript, byte for byte.
//!
//! ```bash
//! cargo run --example scenario_file [path/to/scenario.json]
//! ```

use edge_aka::harness::runner::run_scenario;
use edge_aka::harness::scenario::Scenario;

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        format!(
            "{}/examples/scenarios/tamper_and_replay.json",
            env!("CARGO_MANIFEST_DIR")
        )
    });
    let json = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read scenario file {path}: {e}"));
    let scenario = Scenario::from_json(&json).expect("scenario file parses and validates");

    println!("running {path}\n");
    let report = run_scenario(&scenario).expect("script actions are well-formed");

    for line in report.summary_lines() {
        println!("{line}");
    }

    println!("\ntranscript ({} messages):", report.transcript.lines().count());
    for line in report.transcript.lines() {
        println!("  {line}");
    }

    if !report.costs.is_empty() {
        println!("\nsuccessful exchanges measured:");
        for cost in &report.costs {
            let bits: u64 = cost.message_bits.iter().map(|(_, b)| b).sum();
            println!(
                "  {}: {} hashes, {} bits",
                cost.case,
                cost.total_hashes(),
                bits
            );
        }
    }

    println!(
        "\nscenario {}",
        if report.passed { "PASSED" } else { "FAILED" }
    );
    std::process::exit(i32::from(!report.passed));
}
