//! The two-message direct exchange, step by step.
//!
//! A device asks an edge server for a service the edge can serve itself.
//! Two messages later both sides hold the same session key, each having
//! verified a keyed hash only the legitimate peer could have produced —
//! no public-key operation, no authority contact, four hashes per side.
//!
//! ```bash
//! cargo run --example direct_auth
//! ```

use edge_aka::caps::{Route, ServiceMap};
use edge_aka::crypto::{Clock, ClockHandle};
use edge_aka::device::{password_key, Device, DeviceConfig};
use edge_aka::edge::{EdgeOutcome, EdgeServer};
use edge_aka::ta::TrustAuthority;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    // Enrollment (see the `registration` example for the long version).
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let clock = Clock::starting_at(1_700_000_000);
    let mut ta = TrustAuthority::setup(&mut rng, ClockHandle::new(clock.clone()));
    let mut caps = ServiceMap::new();
    caps.insert("telemetry", Route::Local).unwrap();
    let es_resp = ta.register_edge("ES1", &[], &mut rng).unwrap();
    let mut edge =
        EdgeServer::from_registration("ES1", &es_resp, caps, ClockHandle::new(clock.clone()), 5)
            .unwrap();
    let dev_resp = ta
        .register_device(
            "alice",
            "d0",
            password_key("alice", "hunter2hunter2"),
            &["ES1".to_string()],
            8,
            &mut rng,
        )
        .unwrap();
    let mut device = Device::from_registration(
        "alice",
        "d0",
        "hunter2hunter2",
        &dev_resp,
        ClockHandle::new(clock.clone()),
        DeviceConfig::default(),
    )
    .unwrap();

    // Local login: the password never leaves the device. A wrong guess
    // bumps a lockout counter; the right one yields a token that can
    // re-derive the masking key on demand.
    let token = device.login("alice", "hunter2hunter2").unwrap();
    println!("local login ok\n");

    let corr = 1; // correlates the two messages of this exchange

    // Message 1, device -> edge. The device unmasks its stored
    // credential with the password key, draws a random challenge, and
    // hides it under the credential. The pseudonym is the only
    // identity-shaped field on the wire.
    let msg1 = device
        .begin_auth(&token, &edge.public_id(), b"telemetry:read", corr, &mut rng)
        .unwrap();
    let wire1 = msg1.encode();
    println!(
        "Msg1  device -> edge   {} bytes encoded, {} bits accounted",
        wire1.len(),
        msg1.accounted_bits()
    );
    println!("      {}\n", hex::encode(&wire1));

    // Message 2, edge -> device. The edge recomputes the credential
    // from the pseudonym and its own long-term secret, checks the proof
    // and the timestamp, answers with its own hidden challenge, and
    // derives the session key.
    let outcome = edge.handle_request(corr, &msg1, &mut rng).unwrap();
    let EdgeOutcome::Direct(msg2) = outcome else {
        panic!("telemetry is served locally");
    };
    let wire2 = msg2.encode();
    println!(
        "Msg2  edge -> device   {} bytes encoded, {} bits accounted",
        wire2.len(),
        msg2.accounted_bits()
    );
    println!("      {}\n", hex::encode(&wire2));

    // The device checks the edge's confirmation hash and derives the
    // same key from both challenges.
    let device_key = device.complete_direct(corr, &msg2).unwrap();
    let edge_key = edge.take_session_key(corr).unwrap();
    assert_eq!(device_key, edge_key);

    println!(
        "session agreed; key fingerprint {}",
        hex::encode(device_key.fingerprint().as_bytes())
    );
    println!(
        "hash operations: device {}, edge {}",
        device.meter().calls(),
        edge.meter().calls()
    );
    println!(
        "wire total: {} bits accounted",
        msg1.accounted_bits() + msg2.accounted_bits()
    );
}
