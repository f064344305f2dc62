//! Acceptance gate: one test per required property, each printing a
//! single PASS line (run with `--nocapture` to see them). A failure
//! aborts with the measured values in the panic message.

#[path = "common/oracle.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::time::Instant;

use edge_aka::caps::{Route, ServiceMap};
use edge_aka::cloud::CloudServer;
use edge_aka::crypto::{Clock, ClockHandle, Digest};
use edge_aka::device::{password_key, Device, DeviceConfig, PoolMode};
use edge_aka::edge::{EdgeOutcome, EdgeServer};
use edge_aka::harness::adversary::{
    battery_topology, run_all_batteries, DIRECT_SERVICE, RELAY_SERVICE,
};
use edge_aka::harness::metrics::{summarize, ExchangeCase};
use edge_aka::harness::runner::Runner;
use edge_aka::harness::scenario::OutcomeKind;
use edge_aka::snapshot::records_to_string;
use edge_aka::ta::{TaError, Traced, TrustAuthority};
use edge_aka::wire::WireMessage;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

// --- communication cost ---------------------------------------------------

#[test]
fn c01_direct_exchange_is_exactly_1344_accounted_bits() {
    let mut runner = Runner::new(&battery_topology(101)).unwrap();
    let outcome = runner.run_auth(0, 0, DIRECT_SERVICE);
    assert_eq!(outcome.kind, OutcomeKind::Success, "{}", outcome.detail);
    let record = &runner.costs()[0];
    let names: Vec<&str> = record.message_bits.iter().map(|(n, _)| n.as_str()).collect();
    let sizes: Vec<u64> = record.message_bits.iter().map(|(_, b)| *b).collect();
    assert_eq!(names, ["Msg1", "Msg2"]);
    assert_eq!(sizes, [800, 544]);
    assert_eq!(record.total_bits(), 1344);
    println!("PASS [C1] direct exchange: Msg1+Msg2 == 1344 accounted bits exactly");
}

#[test]
fn c02_relayed_exchange_is_exactly_2688_accounted_bits() {
    let mut runner = Runner::new(&battery_topology(102)).unwrap();
    let outcome = runner.run_auth(0, 0, RELAY_SERVICE);
    assert_eq!(outcome.kind, OutcomeKind::Success, "{}", outcome.detail);
    let record = &runner.costs()[0];
    let names: Vec<&str> = record.message_bits.iter().map(|(n, _)| n.as_str()).collect();
    let sizes: Vec<u64> = record.message_bits.iter().map(|(_, b)| *b).collect();
    assert_eq!(names, ["Msg1", "Msg3", "Msg4", "Msg5"]);
    assert_eq!(sizes, [800, 800, 544, 544]);
    assert_eq!(record.total_bits(), 2688);
    println!("PASS [C2] relayed exchange: Msg1+Msg3+Msg4+Msg5 == 2688 accounted bits exactly");
}

// --- computation cost -----------------------------------------------------

#[test]
fn c03_hash_counts_are_exact_and_uniform_over_200_seeded_runs_per_case() {
    let mut runner = Runner::new(&battery_topology(103)).unwrap();
    for _ in 0..200 {
        let outcome = runner.run_auth(0, 0, DIRECT_SERVICE);
        assert_eq!(outcome.kind, OutcomeKind::Success, "{}", outcome.detail);
    }
    for _ in 0..200 {
        let outcome = runner.run_auth(1, 0, RELAY_SERVICE);
        assert_eq!(outcome.kind, OutcomeKind::Success, "{}", outcome.detail);
    }
    assert_eq!(runner.costs().len(), 400);
    for record in runner.costs() {
        match record.case {
            ExchangeCase::Direct => {
                assert_eq!(
                    (record.device_hashes, record.edge_hashes, record.cloud_hashes),
                    (4, 4, 0),
                    "direct-case hash counts drifted"
                );
                assert_eq!(record.total_hashes(), 8);
            }
            ExchangeCase::Relayed => {
                assert_eq!(
                    (record.device_hashes, record.edge_hashes, record.cloud_hashes),
                    (5, 7, 5),
                    "relayed-case hash counts drifted"
                );
                assert_eq!(record.total_hashes(), 17);
            }
        }
    }
    let report = summarize(runner.costs());
    assert!(report.cases().all(|c| c.uniform));
    println!(
        "PASS [C3] hash counts exact over 200 runs/case: direct 4/4/0 (8), relayed 5/7/5 (17)"
    );
}

#[test]
fn c04_timing_is_reported_informationally_with_hash_counts_as_the_portable_figure() {
    // Wall-clock cost depends on the machine, so it is never asserted;
    // the fixed hash counts carry the comparable number.
    let mut runner = Runner::new(&battery_topology(104)).unwrap();
    let start = Instant::now();
    for _ in 0..50 {
        assert_eq!(runner.run_auth(0, 0, DIRECT_SERVICE).kind, OutcomeKind::Success);
    }
    let direct = start.elapsed();
    let start = Instant::now();
    for _ in 0..50 {
        assert_eq!(runner.run_auth(0, 0, RELAY_SERVICE).kind, OutcomeKind::Success);
    }
    let relayed = start.elapsed();
    for record in runner.costs() {
        let expected = match record.case {
            ExchangeCase::Direct => 8,
            ExchangeCase::Relayed => 17,
        };
        assert_eq!(record.total_hashes(), expected);
    }
    println!(
        "INFO [C4] this machine: direct {:.3} ms/run, relayed {:.3} ms/run (informational only)",
        direct.as_secs_f64() * 1e3 / 50.0,
        relayed.as_secs_f64() * 1e3 / 50.0
    );
    println!("PASS [C4] timing reported informationally; hash counts stand in as the portable cost");
}

// --- key agreement --------------------------------------------------------

#[test]
fn c05_a_thousand_mixed_runs_all_agree_on_keys_quickly() {
    let mut runner = Runner::new(&battery_topology(105)).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(505);
    // Valid picks in the stock deployment: ES1 serves telemetry locally
    // and relays archive; ES2 serves telemetry locally and relays
    // analytics. Both devices are registered with both edges.
    let picks: [(usize, &[u8]); 4] = [
        (0, b"telemetry:read"),
        (0, b"archive:store"),
        (1, b"telemetry:read"),
        (1, b"analytics:run"),
    ];
    let start = Instant::now();
    let total = 1000;
    let mut direct = 0u32;
    let mut relayed = 0u32;
    for _ in 0..total {
        let d = (rng.next_u32() % 2) as usize;
        let (e, service) = picks[(rng.next_u32() % 4) as usize];
        let outcome = runner.run_auth(d, e, service);
        // Success requires the device key to equal the responding
        // server's key; any mismatch surfaces as KeyMismatch.
        assert_eq!(outcome.kind, OutcomeKind::Success, "{}", outcome.detail);
    }
    for record in runner.costs() {
        match record.case {
            ExchangeCase::Direct => direct += 1,
            ExchangeCase::Relayed => relayed += 1,
        }
    }
    let elapsed = start.elapsed();
    assert_eq!(direct + relayed, total);
    assert!(direct > 0 && relayed > 0, "mix must cover both cases");
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "1000 runs took {:.2} s",
        elapsed.as_secs_f64()
    );
    println!(
        "PASS [C5] {total} mixed runs ({direct} direct, {relayed} relayed): 100% key agreement in {:.2} s",
        elapsed.as_secs_f64()
    );
}

// --- adversary suite --------------------------------------------------------

#[test]
fn c06_every_adversary_battery_rejects_every_attempt() {
    let reports = run_all_batteries(106).unwrap();
    assert_eq!(reports.len(), 7);
    let mut total_attempts = 0u64;
    for report in &reports {
        assert!(report.attempts > 0, "{} battery ran nothing", report.name);
        assert!(
            report.clean(),
            "{} battery: {} of {} attempts accepted: {:?} {:?}",
            report.name,
            report.accepted,
            report.attempts,
            report.accepted_details,
            report.sanity
        );
        total_attempts += u64::from(report.attempts);
    }
    let by_name: BTreeMap<&str, u64> = reports
        .iter()
        .map(|r| (r.name.as_str(), r.attempts))
        .collect();
    // Tamper walks both edge bytes of every field of every exchange
    // message: 2 x (6 + 4 + 6 + 4 + 4) field instances.
    assert_eq!(by_name["tamper"], 48);
    // Stolen-store forgeries: at least 100 password-less attempts.
    assert!(by_name["steal-device"] >= 100);
    println!(
        "PASS [C6] adversary suite: {total_attempts} attempts across 7 batteries, all rejected"
    );
}

#[test]
fn c06b_stolen_store_without_password_never_authenticates() {
    let mut runner = Runner::new(&battery_topology(160)).unwrap();
    runner.steal_device(0);
    let (accepted_direct, direct) = runner
        .forge_with_stolen(0, 0, DIRECT_SERVICE, 60)
        .unwrap();
    let (accepted_relayed, relayed) = runner
        .forge_with_stolen(0, 0, RELAY_SERVICE, 60)
        .unwrap();
    assert_eq!(accepted_direct + accepted_relayed, 0);
    assert_eq!(direct.kind, OutcomeKind::AllRejected);
    assert_eq!(relayed.kind, OutcomeKind::AllRejected);
    // The rightful owner is unaffected.
    assert_eq!(runner.run_auth(0, 0, DIRECT_SERVICE).kind, OutcomeKind::Success);
    println!("PASS [C6b] 120 stolen-store attempts without the password: 0 accepted");
}

// --- semi-trusted servers ---------------------------------------------------

#[test]
fn c07_server_state_contains_no_device_secret_after_50_mixed_runs() {
    let mut runner = Runner::new(&battery_topology(107)).unwrap();
    let passwords = [("alice/d0", "correct horse battery"), ("bob/d1", "hunter2hunter2")];
    for i in 0..50 {
        let d = i % 2;
        let service = if i % 4 < 2 { DIRECT_SERVICE } else { RELAY_SERVICE };
        assert_eq!(runner.run_auth(d, 0, service).kind, OutcomeKind::Success);
    }

    // Everything a curious edge or cloud operator can read: persistent
    // records plus the in-memory debug view.
    let mut dumps: Vec<(String, String)> = Vec::new();
    for id in ["ES1", "ES2"] {
        let edge = runner.edge(id).unwrap();
        dumps.push((
            format!("edge {id}"),
            format!("{}\n{:?}", records_to_string(&edge.snapshot()), edge),
        ));
    }
    let cloud = runner.cloud("CS1").unwrap();
    dumps.push((
        "cloud CS1".into(),
        format!("{}\n{:?}", records_to_string(&cloud.snapshot()), cloud),
    ));

    // The secrets that must not appear: passwords, password keys (EPW),
    // device secret identities (DID), and unmasked credentials (a).
    let mut patterns: Vec<(String, Vec<u8>)> = Vec::new();
    for (name, password) in passwords {
        let (user, _) = name.split_once('/').unwrap();
        patterns.push((format!("{name} password"), password.as_bytes().to_vec()));
        let epw = password_key(user, password);
        patterns.push((format!("{name} EPW"), epw.as_bytes().to_vec()));
        let device = runner.device(name).unwrap();
        let mut did = None;
        let mut credentials = Vec::new();
        for record in device.snapshot() {
            match record.kind.as_str() {
                "did" => did = Some(record.digest(0).unwrap()),
                "pair" => credentials.push(edge_aka::crypto::xor(
                    &record.digest(1).unwrap(),
                    &epw,
                )),
                _ => {}
            }
        }
        patterns.push((format!("{name} DID"), did.unwrap().as_bytes().to_vec()));
        for (i, a) in credentials.iter().enumerate() {
            patterns.push((format!("{name} a[{i}]"), a.as_bytes().to_vec()));
        }
    }

    for (where_, dump) in &dumps {
        let raw = dump.as_bytes();
        for (what, pattern) in &patterns {
            let hex_form = hex::encode(pattern);
            assert!(
                !dump.contains(&hex_form),
                "{where_} dump contains {what} (hex form)"
            );
            assert!(
                !raw.windows(pattern.len().max(1)).any(|w| w == &pattern[..]),
                "{where_} dump contains {what} (raw bytes)"
            );
        }
    }
    let checked: usize = dumps.len() * patterns.len();
    println!(
        "PASS [C7] after 50 runs, {} server dumps x {} secret patterns: no leak ({checked} checks)",
        dumps.len(),
        patterns.len()
    );
}

// --- password update ----------------------------------------------------------

#[test]
fn c08_password_update_remasks_in_place_with_no_authority_contact() {
    let mut runner = Runner::new(&battery_topology(108)).unwrap();
    let epw_old = password_key("alice", "correct horse battery");
    let unmask = |runner: &Runner, key: &Digest| -> Vec<Digest> {
        runner
            .device("alice/d0")
            .unwrap()
            .snapshot()
            .iter()
            .filter(|r| r.kind == "pair")
            .map(|r| edge_aka::crypto::xor(&r.digest(1).unwrap(), key))
            .collect()
    };
    let before = unmask(&runner, &epw_old);
    let ops_before = runner.ta().operations();

    runner
        .device_mut("alice/d0")
        .unwrap()
        .update_password("alice", "correct horse battery", "brand new phrase")
        .unwrap();

    // Invariant: every re-masked pair unmasks to the same credential.
    let epw_new = password_key("alice", "brand new phrase");
    let after = unmask(&runner, &epw_new);
    assert_eq!(before, after);
    assert!(!before.is_empty());

    // Old password rejected, new accepted.
    assert_eq!(
        runner.login_device(0, "correct horse battery").kind,
        OutcomeKind::RejectedBadCredentials
    );
    assert_eq!(
        runner.login_device(0, "brand new phrase").kind,
        OutcomeKind::Success
    );

    // Both exchange shapes succeed with the new password, and the
    // authority served nothing since before the update.
    assert_eq!(runner.run_auth(0, 0, DIRECT_SERVICE).kind, OutcomeKind::Success);
    assert_eq!(runner.run_auth(0, 0, RELAY_SERVICE).kind, OutcomeKind::Success);
    assert_eq!(runner.ta().operations(), ops_before);
    println!(
        "PASS [C8] password update: {} pairs re-masked in place, old rejected, both cases pass, 0 authority ops",
        before.len()
    );
}

// --- traceability ----------------------------------------------------------

#[test]
fn c09_the_authority_traces_100_pseudonyms_and_rejects_100_strays() {
    let mut rng = ChaCha20Rng::seed_from_u64(109);
    let clock = Clock::starting_at(50_000);
    let mut ta = TrustAuthority::setup(&mut rng, ClockHandle::new(clock.clone()));
    let secret = ta.secret();

    ta.register_cloud("CS1", &mut rng).unwrap();
    let mut issued: Vec<(Digest, String, String)> = Vec::new(); // (pid, uid, id)
    for eid in ["ES1", "ES2"] {
        ta.register_edge(eid, &["CS1".to_string()], &mut rng)
            .unwrap();
    }
    for (uid, id, pw) in [("ana", "d0", "pw-a"), ("ben", "d1", "pw-b")] {
        let resp = ta
            .register_device(
                uid,
                id,
                password_key(uid, pw),
                &["ES1".to_string(), "ES2".to_string()],
                25,
                &mut rng,
            )
            .unwrap();
        let WireMessage::RegisterDeviceResponse { bundles, .. } = resp else {
            panic!("unexpected registration reply");
        };
        for bundle in bundles {
            for (pid, _) in bundle.pairs {
                issued.push((pid, uid.to_string(), id.to_string()));
            }
        }
    }
    assert_eq!(issued.len(), 100);

    for (pid, uid, id) in &issued {
        let Traced {
            user_id,
            device_id,
            did,
        } = ta.trace(pid).unwrap();
        assert_eq!((&user_id, &device_id), (uid, id));
        // The resolved DID is the real derived identity.
        assert_eq!(did.0, oracle::device_secret_id(uid, id, &secret.0));
    }

    let mut strays = 0;
    for _ in 0..100 {
        let mut raw = [0u8; 32];
        rng.fill_bytes(&mut raw);
        assert_eq!(ta.trace(&Digest(raw)), Err(TaError::NotFound));
        strays += 1;
    }
    println!("PASS [C9] 100/100 issued pseudonyms traced correctly; {strays}/100 strays NotFound");
}

// --- oracle equivalence ------------------------------------------------------

/// All long-lived values of one freshly registered deployment, together
/// with the oracle's recomputation of each.
struct KnownDeployment {
    clock: std::sync::Arc<Clock>,
    device: Device,
    edge: EdgeServer,
    cloud: CloudServer,
    /// pid -> unmasked pair credential a = h(pid || SE)
    pair_credentials: BTreeMap<[u8; 32], [u8; 32]>,
    /// the edge's pseudonym and relay credential toward the cloud
    pairing_pid: [u8; 32],
    pairing_credential: [u8; 32],
}

fn known_deployment(seed: u64, registered_at: u32) -> KnownDeployment {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let clock = Clock::starting_at(registered_at);
    let handle = || ClockHandle::new(clock.clone());
    let mut ta = TrustAuthority::setup(&mut rng, handle());
    let s = ta.secret().0;

    let uid = format!("user{seed}");
    let did_id = format!("dev{seed}");
    let password = format!("phrase number {seed}");

    // Cloud: credential must be h(s || h(PK)).
    let cs_resp = ta.register_cloud("CS1", &mut rng).unwrap();
    let WireMessage::RegisterCsResponse {
        credential: sc,
        public_key: cs_pk,
        ..
    } = cs_resp.clone()
    else {
        panic!("unexpected reply");
    };
    assert_eq!(sc.0, oracle::server_credential(&s, &cs_pk.0));

    // Edge: own credential plus one pairing toward CS1.
    let es_resp = ta
        .register_edge("ES1", &["CS1".to_string()], &mut rng)
        .unwrap();
    let WireMessage::RegisterEsResponse {
        credential: se,
        public_key: es_pk,
        pairings,
        ..
    } = es_resp.clone()
    else {
        panic!("unexpected reply");
    };
    assert_eq!(se.0, oracle::server_credential(&s, &es_pk.0));
    assert_eq!(pairings.len(), 1);
    let expected_pid = oracle::edge_pairing_pseudonym("ES1", &cs_pk.0);
    assert_eq!(pairings[0].pseudonym.0, expected_pid);
    assert_eq!(
        pairings[0].credential.0,
        oracle::edge_pairing_credential(&expected_pid, &sc.0)
    );

    // Device: DID, pool pseudonyms, masked credentials.
    let pool = 4u32;
    let dev_resp = ta
        .register_device(
            &uid,
            &did_id,
            password_key(&uid, &password),
            &["ES1".to_string()],
            pool,
            &mut rng,
        )
        .unwrap();
    let WireMessage::RegisterDeviceResponse { did, bundles, .. } = dev_resp.clone() else {
        panic!("unexpected reply");
    };
    assert_eq!(did.0, oracle::device_secret_id(&uid, &did_id, &s));
    let epw = oracle::password_mask_key(&uid, &password);
    assert_eq!(password_key(&uid, &password).0, epw);
    let mut pair_credentials = BTreeMap::new();
    for (k, (pid, masked)) in bundles[0].pairs.iter().enumerate() {
        let expected_pid =
            oracle::device_pseudonym(&did.0, &es_pk.0, registered_at + u32::try_from(k).unwrap());
        assert_eq!(pid.0, expected_pid);
        let a = oracle::pair_credential(&pid.0, &se.0);
        assert_eq!(masked.0, oracle::masked_credential(&a, &epw));
        pair_credentials.insert(pid.0, a);
    }

    // The device's stored login verifier also matches the reference.
    let device = Device::from_registration(
        &uid,
        &did_id,
        &password,
        &dev_resp,
        handle(),
        DeviceConfig::default(),
    )
    .unwrap();
    let verifier = device
        .snapshot()
        .iter()
        .find(|r| r.kind == "verifier")
        .unwrap()
        .digest(0)
        .unwrap();
    assert_eq!(verifier.0, oracle::login_verifier(&uid, &did_id, &password));

    let mut cs_services = ServiceMap::new();
    cs_services.insert("archive", Route::Local).unwrap();
    let cloud =
        CloudServer::from_registration("CS1", &cs_resp, cs_services, handle(), 1_000_000).unwrap();
    let mut es_caps = ServiceMap::new();
    es_caps.insert("telemetry", Route::Local).unwrap();
    es_caps
        .insert("archive", Route::Clouds(vec!["CS1".into()]))
        .unwrap();
    let edge =
        EdgeServer::from_registration("ES1", &es_resp, es_caps, handle(), 1_000_000).unwrap();

    KnownDeployment {
        clock,
        device,
        edge,
        cloud,
        pair_credentials,
        pairing_pid: expected_pid,
        pairing_credential: oracle::edge_pairing_credential(&expected_pid, &sc.0),
    }
}

#[test]
fn c10a_registration_formulas_match_the_oracle_on_100_random_instances() {
    // Every registration-time derivation (SC, SE, pairing pid and
    // credential, DID, pool pseudonyms, a, b, EPW, verifier) is checked
    // inside known_deployment(); 100 seeds give 100+ instances of each.
    for seed in 0..100u64 {
        known_deployment(seed, 10_000 + u32::try_from(seed).unwrap() * 17);
    }
    println!("PASS [C10a] registration derivations match the reference on 100 randomized deployments");
}

#[test]
fn c10b_exchange_formulas_match_the_oracle_on_100_runs_each_case() {
    let mut kd = known_deployment(424_242, 77_000);
    let mut rng = ChaCha20Rng::seed_from_u64(910);
    let token = kd.device.login(&format!("user{}", 424_242), "phrase number 424242");
    let token = token.unwrap();

    // 100 direct runs: recover both hidden nonces with the oracle's
    // credentials and recompute every proof and the key.
    for corr in 0..100u64 {
        kd.clock.advance(1);
        let msg1 = kd
            .device
            .begin_auth(&token, &kd.edge.public_id(), b"telemetry:read", corr, &mut rng)
            .unwrap();
        let WireMessage::AuthRequest {
            service,
            pseudonym,
            masked_nonce,
            proof,
            stamp,
        } = msg1.clone()
        else {
            panic!("wrong first message");
        };
        let a = kd.pair_credentials[&pseudonym.0];
        let x1 = oracle::xor32(&masked_nonce.0, &a);
        assert_eq!(
            proof.0,
            oracle::request_proof(&service, &pseudonym.0, &x1, stamp.0),
            "request proof drifted from the reference"
        );

        let EdgeOutcome::Direct(msg2) = kd.edge.handle_request(corr, &msg1, &mut rng).unwrap()
        else {
            panic!("telemetry is local");
        };
        let WireMessage::EdgeResponse {
            masked_nonce: m2,
            proof: beta,
            stamp: t2,
        } = msg2.clone()
        else {
            panic!("wrong second message");
        };
        let x2 = oracle::xor32(&m2.0, &a);
        let sk = oracle::direct_session_key(&a, &x1, &x2);
        assert_eq!(
            beta.0,
            oracle::confirm_proof(&sk, &x2, t2.0),
            "confirmation proof drifted from the reference"
        );

        let device_key = kd.device.complete_direct(corr, &msg2).unwrap();
        let edge_key = kd.edge.take_session_key(corr).unwrap();
        assert_eq!(device_key.0 .0, sk, "device key differs from the reference");
        assert_eq!(edge_key.0 .0, sk, "edge key differs from the reference");
    }

    // 100 relayed runs: the chained shares, both wrapped forms, and all
    // three confirmation proofs.
    for corr in 100..200u64 {
        kd.clock.advance(1);
        let msg1 = kd
            .device
            .begin_auth(&token, &kd.edge.public_id(), b"archive:store", corr, &mut rng)
            .unwrap();
        let WireMessage::AuthRequest {
            pseudonym,
            masked_nonce,
            ..
        } = msg1.clone()
        else {
            panic!("wrong first message");
        };
        let a = kd.pair_credentials[&pseudonym.0];
        let x1 = oracle::xor32(&masked_nonce.0, &a);

        let EdgeOutcome::Relay { cloud_id, message: msg3 } =
            kd.edge.handle_request(corr, &msg1, &mut rng).unwrap()
        else {
            panic!("archive is relayed");
        };
        assert_eq!(cloud_id, "CS1");
        let WireMessage::CloudRequest {
            service,
            pseudonym: relay_pid,
            masked_share,
            proof: theta,
            stamp: t3,
        } = msg3.clone()
        else {
            panic!("wrong relay message");
        };
        assert_eq!(relay_pid.0, kd.pairing_pid);
        let s_ij = oracle::relay_share(&a, &x1);
        assert_eq!(
            oracle::xor32(&masked_share.0, &kd.pairing_credential),
            s_ij,
            "device share wrapped with something other than the pairing credential"
        );
        assert_eq!(
            theta.0,
            oracle::request_proof(&service, &relay_pid.0, &s_ij, t3.0),
            "relay proof drifted from the reference"
        );

        let msg4 = kd.cloud.handle_relay(corr, &msg3, &mut rng).unwrap();
        let WireMessage::CloudResponse {
            masked_share: m4,
            proof: nu,
            stamp: t4,
        } = msg4.clone()
        else {
            panic!("wrong cloud reply");
        };
        let s_jk = oracle::xor32(&m4.0, &kd.pairing_credential);
        let sk = oracle::relayed_session_key(&s_ij, &s_jk);
        assert_eq!(
            nu.0,
            oracle::confirm_proof(&sk, &s_jk, t4.0),
            "cloud confirmation drifted from the reference"
        );

        let msg5 = kd.edge.handle_cloud_response(corr, &msg4).unwrap();
        let WireMessage::EdgeRelay {
            masked_share: m5,
            proof: epsilon,
            stamp: t5,
        } = msg5.clone()
        else {
            panic!("wrong final message");
        };
        assert_eq!(
            oracle::xor32(&m5.0, &a),
            s_jk,
            "cloud share re-wrapped with something other than the device credential"
        );
        assert_eq!(
            epsilon.0,
            oracle::confirm_proof(&sk, &s_jk, t5.0),
            "edge confirmation drifted from the reference"
        );

        let device_key = kd.device.complete_relayed(corr, &msg5).unwrap();
        let cloud_key = kd.cloud.take_session_key(corr).unwrap();
        assert_eq!(device_key.0 .0, sk, "device key differs from the reference");
        assert_eq!(cloud_key.0 .0, sk, "cloud key differs from the reference");
    }
    println!(
        "PASS [C10b] per-exchange derivations match the reference over 100 direct + 100 relayed runs"
    );
}

// --- pool-mode sanity used by the criteria above ---------------------------

#[test]
fn single_use_pools_spend_each_pseudonym_exactly_once() {
    let mut topology = battery_topology(111);
    topology.pool_mode = PoolMode::SingleUse;
    topology.pool_size = 5;
    let mut runner = Runner::new(&topology).unwrap();
    for _ in 0..5 {
        assert_eq!(runner.run_auth(0, 0, DIRECT_SERVICE).kind, OutcomeKind::Success);
    }
    let exhausted = runner.run_auth(0, 0, DIRECT_SERVICE);
    assert_eq!(exhausted.kind, OutcomeKind::RejectedPoolExhausted);
    // The other edge's pool is untouched.
    assert_eq!(runner.run_auth(0, 1, DIRECT_SERVICE).kind, OutcomeKind::Success);
}
