//! Enrollment walk-through: one trust authority provisions a cloud
//! server, an edge server paired with it, and a device for a user.
//!
//! The interesting property to watch for in the output: the device's
//! pseudonym pairs are *masked* — the edge-side credential `a` is stored
//! XOR-ed with a password-derived key, so the device store alone is not
//! enough to authenticate, and the authority keeps no password material
//! at all.
//!
//! ```bash
//! cargo run --example registration
//! ```

use edge_aka::caps::{Route, ServiceMap};
use edge_aka::cloud::CloudServer;
use edge_aka::crypto::{Clock, ClockHandle};
use edge_aka::device::{password_key, Device, DeviceConfig};
use edge_aka::edge::EdgeServer;
use edge_aka::ta::TrustAuthority;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let clock = Clock::starting_at(1_000_000);
    let handle = || ClockHandle::new(clock.clone());

    // The authority draws its long-term registration secret `s` once.
    // Every credential it ever issues is a hash binding to this secret.
    let mut ta = TrustAuthority::setup(&mut rng, handle());
    println!("authority ready (secret stays with the authority)\n");

    // --- Cloud server -----------------------------------------------------
    // The cloud asks to be registered; the authority answers with a key
    // pair and the long-term credential SC = h(s || h(public key)).
    let mut cs_services = ServiceMap::new();
    cs_services.insert("archive", Route::Local).unwrap();
    let cs_resp = ta.register_cloud("CS1", &mut rng).unwrap();
    let cloud =
        CloudServer::from_registration("CS1", &cs_resp, cs_services, handle(), 5).unwrap();
    println!("cloud server CS1 registered");
    for record in cloud.snapshot() {
        println!("  store record: {}", record.kind);
    }

    // --- Edge server ------------------------------------------------------
    // The edge is paired with CS1: along with its own credential SE it
    // receives a pseudonym toward CS1 and the relay credential
    // C = h(pid || SC), which later lets CS1 recognize it without
    // learning its identity.
    let mut es_caps = ServiceMap::new();
    es_caps.insert("telemetry", Route::Local).unwrap();
    es_caps
        .insert("archive", Route::Clouds(vec!["CS1".into()]))
        .unwrap();
    let es_resp = ta
        .register_edge("ES1", &["CS1".to_string()], &mut rng)
        .unwrap();
    let edge = EdgeServer::from_registration("ES1", &es_resp, es_caps, handle(), 5).unwrap();
    println!("\nedge server ES1 registered, paired with CS1");
    for record in edge.snapshot() {
        println!("  store record: {}", record.kind);
    }

    // --- Device -----------------------------------------------------------
    // The user picks a password. Only h(UID || PW) travels to the
    // authority, which masks each issued credential with it and then
    // forgets it. The device keeps: DID, a key pair, and per-edge
    // bundles of (pseudonym, masked credential) pairs.
    let user = "alice";
    let password = "correct horse battery";
    let dev_resp = ta
        .register_device(
            user,
            "d0",
            password_key(user, password),
            &["ES1".to_string()],
            4,
            &mut rng,
        )
        .unwrap();
    let device = Device::from_registration(
        user,
        "d0",
        password,
        &dev_resp,
        handle(),
        DeviceConfig::default(),
    )
    .unwrap();
    println!("\ndevice alice/d0 registered with 4 pseudonym pairs for ES1");
    for record in device.snapshot() {
        println!("  store record: {}", record.kind);
    }

    println!("\nnote: no store above contains the password or h(UID || PW);");
    println!("the masked pairs only become usable again at login time.");
}
