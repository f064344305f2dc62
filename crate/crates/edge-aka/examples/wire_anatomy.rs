//! Byte-level anatomy of every authentication message.
//!
//! Encodes one honest run of each exchange shape and prints every
//! message's fields with their exact byte ranges, plus the split between
//! accounted payload bits (digests and stamps the protocol itself
//! defines) and framing (tag and length prefixes the codec adds).
//!
//! ```bash
//! cargo run --example wire_anatomy
//! ```

use edge_aka::harness::adversary::{battery_topology, DIRECT_SERVICE, RELAY_SERVICE};
use edge_aka::harness::runner::Runner;
use edge_aka::wire::{field_ranges, WireMessage};

fn main() {
    let mut runner = Runner::new(&battery_topology(8)).unwrap();
    runner.run_auth(0, 0, DIRECT_SERVICE);
    runner.run_auth(0, 0, RELAY_SERVICE);

    for envelope in &runner.transcript().to_vec() {
        let message = WireMessage::decode(&envelope.payload).expect("honest traffic decodes");
        let encoded = envelope.payload.clone();
        println!(
            "{}  {} -> {}  ({} bytes encoded, {} bits accounted)",
            message.variant(),
            envelope.src,
            envelope.dst,
            encoded.len(),
            message.accounted_bits()
        );
        for (name, range) in field_ranges(&message) {
            let bytes = &encoded[range.clone()];
            let shown = if bytes.len() > 12 {
                format!("{}…", hex::encode(&bytes[..12]))
            } else {
                hex::encode(bytes)
            };
            println!("  {:>5}..{:<5} {:<16} {}", range.start, range.end, name, shown);
        }
        println!();
    }
}
