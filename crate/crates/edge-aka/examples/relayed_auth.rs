//! The four-message relayed exchange, step by step.
//!
//! The device asks its edge server for a service the edge cannot serve.
//! The edge forwards the authentication to a cloud server it was paired
//! with at registration — under its *own* pseudonym, so the cloud learns
//! neither the device's nor the edge's identity. The final key is shared
//! by device and cloud; the edge, having contributed and verified its
//! leg, hands the last message down and steps out.
//!
//! ```bash
//! cargo run --example relayed_auth
//! ```

use edge_aka::caps::{Route, ServiceMap};
use edge_aka::cloud::CloudServer;
use edge_aka::crypto::{Clock, ClockHandle};
use edge_aka::device::{password_key, Device, DeviceConfig};
use edge_aka::edge::{EdgeOutcome, EdgeServer};
use edge_aka::ta::TrustAuthority;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let clock = Clock::starting_at(1_700_000_000);
    let handle = || ClockHandle::new(clock.clone());
    let mut ta = TrustAuthority::setup(&mut rng, handle());

    // CS1 serves `archive`; ES1 routes `archive` to CS1.
    let mut cs_services = ServiceMap::new();
    cs_services.insert("archive", Route::Local).unwrap();
    let cs_resp = ta.register_cloud("CS1", &mut rng).unwrap();
    let mut cloud =
        CloudServer::from_registration("CS1", &cs_resp, cs_services, handle(), 5).unwrap();

    let mut es_caps = ServiceMap::new();
    es_caps
        .insert("archive", Route::Clouds(vec!["CS1".into()]))
        .unwrap();
    let es_resp = ta
        .register_edge("ES1", &["CS1".to_string()], &mut rng)
        .unwrap();
    let mut edge = EdgeServer::from_registration("ES1", &es_resp, es_caps, handle(), 5).unwrap();

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
        handle(),
        DeviceConfig::default(),
    )
    .unwrap();

    let token = device.login("alice", "hunter2hunter2").unwrap();
    let corr = 1;

    // Msg1 is identical in shape to the direct case; the device does not
    // know (or need to know) that the request will be relayed.
    let msg1 = device
        .begin_auth(&token, &edge.public_id(), b"archive:store", corr, &mut rng)
        .unwrap();
    println!("Msg1  device -> edge   {} bits", msg1.accounted_bits());

    // The edge authenticates the device as usual, but `archive` routes to
    // CS1, so instead of answering it derives the relay share
    // S = h(credential || challenge) and wraps it for the cloud under its
    // own pseudonym-derived pairing credential.
    let outcome = edge.handle_request(corr, &msg1, &mut rng).unwrap();
    let EdgeOutcome::Relay { cloud_id, message: msg3 } = outcome else {
        panic!("archive routes to the cloud");
    };
    println!(
        "Msg3  edge -> {cloud_id}    {} bits (device share hidden under pairing credential)",
        msg3.accounted_bits()
    );

    // The cloud recognizes the pairing pseudonym, verifies the edge's
    // proof, contributes its own share, and derives the session key from
    // both shares.
    let msg4 = cloud.handle_relay(corr, &msg3, &mut rng).unwrap();
    println!("Msg4  {cloud_id} -> edge    {} bits", msg4.accounted_bits());

    // The edge verifies the cloud's confirmation, unwraps the cloud
    // share, re-wraps it for the device, and appends its own proof.
    let msg5 = edge.handle_cloud_response(corr, &msg4).unwrap();
    println!("Msg5  edge -> device   {} bits", msg5.accounted_bits());

    // The device ends with the same two-share key the cloud derived.
    let device_key = device.complete_relayed(corr, &msg5).unwrap();
    let cloud_key = cloud.take_session_key(corr).unwrap();
    assert_eq!(device_key, cloud_key);

    println!(
        "\nsession agreed across three parties; key fingerprint {}",
        hex::encode(device_key.fingerprint().as_bytes())
    );
    println!(
        "hash operations: device {}, edge {}, cloud {}",
        device.meter().calls(),
        edge.meter().calls(),
        cloud.meter().calls()
    );
    println!(
        "wire total: {} bits accounted",
        msg1.accounted_bits()
            + msg3.accounted_bits()
            + msg4.accounted_bits()
            + msg5.accounted_bits()
    );
}
