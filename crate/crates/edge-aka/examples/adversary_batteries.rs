//! Runs every scripted attack battery against a live deployment.
//!
//! The channel model gives the adversary everything short of the
//! parties' secrets: it can record, replay, flip bits in, truncate, and
//! wholesale replace messages in flight, inject its own, and even walk
//! off with a device's storage. Each battery scripts one of those powers
//! and counts acceptances; a healthy protocol rejects every attempt.
//!
//! ```bash
//! cargo run --example adversary_batteries
//! ```

use edge_aka::harness::adversary::run_all_batteries;

fn main() {
    let reports = run_all_batteries(2024).expect("batteries run on the stock deployment");

    println!("{:<20} {:>8} {:>9} {:>9}", "battery", "attempts", "rejected", "accepted");
    println!("{}", "-".repeat(50));
    let mut attempts = 0;
    let mut all_clean = true;
    for report in &reports {
        attempts += report.attempts;
        all_clean &= report.clean();
        println!(
            "{:<20} {:>8} {:>9} {:>9}  {}",
            report.name,
            report.attempts,
            report.rejected,
            report.accepted,
            if report.clean() { "clean" } else { "BREACHED" }
        );
        for detail in &report.accepted_details {
            println!("    accepted: {detail}");
        }
    }
    println!("{}", "-".repeat(50));
    println!(
        "{} attempts total; {}",
        attempts,
        if all_clean {
            "every single one rejected"
        } else {
            "SOME WERE ACCEPTED — investigate!"
        }
    );
    assert!(all_clean);
}
