//! Pseudonym tracing: anonymous to everyone except the authority.
//!
//! Servers and eavesdroppers only ever see hash-shaped pseudonyms on the
//! wire. The authority, which issued them, keeps a private index from
//! each pseudonym back to the registered identity — so a misbehaving
//! party can be identified on demand, but by nobody else.
//!
//! ```bash
//! cargo run --example traceability
//! ```

use edge_aka::crypto::Digest;
use edge_aka::harness::adversary::{battery_topology, DIRECT_SERVICE, RELAY_SERVICE};
use edge_aka::harness::runner::Runner;
use edge_aka::ta::{TaError, Traced};
use edge_aka::wire::WireMessage;

fn main() {
    let mut runner = Runner::new(&battery_topology(5)).unwrap();

    // A few honest exchanges leave pseudonyms in the captured traffic;
    // the relayed one also puts a server pairing pseudonym on the wire.
    for (d, service) in [(0usize, DIRECT_SERVICE), (1, DIRECT_SERVICE), (0, RELAY_SERVICE)] {
        runner.run_auth(d, 0, service);
    }

    // An observer's view: decode each capture and pull out the
    // pseudonyms. Nothing else about the senders is visible.
    let mut device_pids = Vec::new();
    let mut server_pids = Vec::new();
    for envelope in runner.transcript() {
        match WireMessage::decode(&envelope.payload) {
            Ok(WireMessage::AuthRequest { pseudonym, .. }) => device_pids.push(pseudonym),
            Ok(WireMessage::CloudRequest { pseudonym, .. }) => server_pids.push(pseudonym),
            _ => {}
        }
    }
    println!("captured {} device request pseudonyms:", device_pids.len());
    for pid in &device_pids {
        println!("  {pid}");
    }

    // The authority resolves every one of them.
    println!("\nauthority traces:");
    for pid in &device_pids {
        match runner.ta_mut().trace(pid) {
            Ok(Traced {
                user_id,
                device_id,
                did,
            }) => {
                println!("  {pid} -> device {user_id}/{device_id} (did {did})");
            }
            Err(e) => println!("  {pid} -> {e}"),
        }
    }

    // Server pairing pseudonyms (seen on relayed requests) live in a
    // separate namespace: device tracing deliberately cannot resolve
    // them.
    println!("\nserver pairing pseudonyms stay out of the device namespace:");
    for pid in &server_pids {
        assert_eq!(runner.ta_mut().trace(pid), Err(TaError::NotFound));
        println!("  {pid} -> not a device pseudonym");
    }

    // Anyone else holds no index; and even the authority returns
    // not-found for digests it never issued.
    let stray = Digest([0xAB; 32]);
    assert_eq!(runner.ta_mut().trace(&stray), Err(TaError::NotFound));
    println!("\nunissued digest {stray} -> not found, as it should be");
}
