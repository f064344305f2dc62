//! Trust authority: system setup, out-of-band registration of cloud
//! servers, edge servers and devices, and pseudonym tracing.
//!
//! The authority holds the master secret `s` and derives every long-term
//! credential from it:
//!
//! * cloud server: `SC = h(s || h(PK_cs))`
//! * edge server: `SE = h(s || h(PK_es))`, plus one pseudonym
//!   `pid = h(EID || h(PK_cs))` and credential `C = h(pid || SC)` per
//!   cloud server it may call on
//! * device: `DID = h(UID || ID || s)`, plus per edge server a pool of
//!   pseudonyms `pid_x = h(DID || h(PK_es) || T_x)` and masked
//!   credentials `b_x = EPW xor h(pid_x || SE)`
//!
//! The device's password-derived key `EPW` is used once to mask the
//! credentials and then dropped; the authority keeps no password material.
//! After registration the authority is offline: authentication never
//! touches it, which [`TrustAuthority::operations`] makes checkable.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::crypto::{ClockHandle, Digest, HashMeter, KeyPair};
use crate::snapshot::{self, Record, SnapshotError};
use crate::wire::{canon_var, CloudPairing, EdgeBundle, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaError {
    #[error("`{0}` is already registered")]
    DuplicateRegistration(String),
    #[error("unknown cloud server `{0}`")]
    UnknownCloud(String),
    #[error("unknown edge server `{0}`")]
    UnknownEdge(String),
    #[error("pseudonym pool size must be at least 1")]
    InvalidCount,
    #[error("pseudonym does not resolve to any registered party")]
    NotFound,
    #[error("not a registration request: {0}")]
    UnexpectedMessage(&'static str),
}

/// The identity a device pseudonym resolves to when traced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Traced {
    pub user_id: String,
    pub device_id: String,
    pub did: Digest,
}

#[derive(Debug, Clone)]
struct CloudRecord {
    public_key: Digest,
}

#[derive(Debug, Clone)]
struct EdgeRecord {
    public_key: Digest,
    /// pseudonym toward each registered cloud server, in `cloud_id` order
    pids: Vec<(String, Digest)>,
}

#[derive(Debug, Clone)]
struct DeviceRecord {
    did: Digest,
    public_key: Digest,
    /// pseudonym pool issued for each edge server, in `edge_id` order
    pids: Vec<(String, Vec<Digest>)>,
}

/// The registration authority. One per deployment.
pub struct TrustAuthority {
    secret: Digest,
    clock: ClockHandle,
    meter: HashMeter,
    clouds: BTreeMap<String, CloudRecord>,
    edges: BTreeMap<String, EdgeRecord>,
    devices: BTreeMap<(String, String), DeviceRecord>,
    trace_index: BTreeMap<Digest, Traced>,
    ops: u64,
}

impl TrustAuthority {
    /// Generates a fresh master secret. `clock` stamps the pseudonym
    /// derivation times handed to devices.
    pub fn setup<R: RngCore + ?Sized>(rng: &mut R, clock: ClockHandle) -> TrustAuthority {
        TrustAuthority {
            secret: crate::crypto::random_nonce(rng),
            clock,
            meter: HashMeter::new(),
            clouds: BTreeMap::new(),
            edges: BTreeMap::new(),
            devices: BTreeMap::new(),
            trace_index: BTreeMap::new(),
            ops: 0,
        }
    }

    /// Count of registration and trace operations served so far. The
    /// harness asserts this stays flat while authentication runs.
    pub fn operations(&self) -> u64 {
        self.ops
    }

    pub fn meter(&self) -> &HashMeter {
        &self.meter
    }

    /// Master secret, for persistence and `--show-secrets` only.
    pub fn secret(&self) -> Digest {
        self.secret
    }

    /// Dispatches a registration request message and produces the
    /// response the requesting party stores.
    pub fn handle<R: RngCore + ?Sized>(
        &mut self,
        req: &WireMessage,
        rng: &mut R,
    ) -> Result<WireMessage, TaError> {
        match req {
            WireMessage::RegisterCsRequest { cloud_id } => self.register_cloud(cloud_id, rng),
            WireMessage::RegisterEsRequest { edge_id, clouds } => {
                self.register_edge(edge_id, clouds, rng)
            }
            WireMessage::RegisterDeviceRequest {
                user_id,
                device_id,
                pw_key,
                edges,
                pseudonym_count,
            } => self.register_device(user_id, device_id, *pw_key, edges, *pseudonym_count, rng),
            other => Err(TaError::UnexpectedMessage(other.variant())),
        }
    }

    /// Registers a cloud server: issues its key pair and credential
    /// `SC = h(s || h(PK))`.
    pub fn register_cloud<R: RngCore + ?Sized>(
        &mut self,
        cloud_id: &str,
        rng: &mut R,
    ) -> Result<WireMessage, TaError> {
        self.ops += 1;
        if self.clouds.contains_key(cloud_id) {
            return Err(TaError::DuplicateRegistration(cloud_id.into()));
        }
        let keys = KeyPair::generate(rng);
        let credential = self.server_credential(keys.public);
        self.clouds.insert(
            cloud_id.into(),
            CloudRecord {
                public_key: keys.public,
            },
        );
        Ok(WireMessage::RegisterCsResponse {
            credential,
            secret_key: keys.secret,
            public_key: keys.public,
        })
    }

    /// Registers an edge server and pairs it with the named cloud
    /// servers: credential `SE = h(s || h(PK))` plus per-cloud pseudonym
    /// and relay credential.
    pub fn register_edge<R: RngCore + ?Sized>(
        &mut self,
        edge_id: &str,
        clouds: &[String],
        rng: &mut R,
    ) -> Result<WireMessage, TaError> {
        self.ops += 1;
        if self.edges.contains_key(edge_id) {
            return Err(TaError::DuplicateRegistration(edge_id.into()));
        }
        for cid in clouds {
            if !self.clouds.contains_key(cid) {
                return Err(TaError::UnknownCloud(cid.clone()));
            }
        }
        let keys = KeyPair::generate(rng);
        let credential = self.server_credential(keys.public);
        let mut pairings = Vec::with_capacity(clouds.len());
        let mut pids = Vec::with_capacity(clouds.len());
        for cid in clouds {
            let cloud_pk = self.clouds[cid].public_key;
            let pid = self.meter.hash(&[
                &canon_var(edge_id.as_bytes()),
                self.meter.hash(&[cloud_pk.as_bytes()]).as_bytes(),
            ]);
            let relay_credential = self
                .meter
                .hash(&[pid.as_bytes(), self.server_credential(cloud_pk).as_bytes()]);
            pairings.push(CloudPairing {
                cloud_id: cid.clone(),
                pseudonym: pid,
                credential: relay_credential,
            });
            pids.push((cid.clone(), pid));
        }
        self.edges.insert(
            edge_id.into(),
            EdgeRecord {
                public_key: keys.public,
                pids,
            },
        );
        Ok(WireMessage::RegisterEsResponse {
            credential,
            secret_key: keys.secret,
            public_key: keys.public,
            pairings,
        })
    }

    /// Registers a device under `(user_id, device_id)` and issues
    /// `pseudonym_count` pseudonym/credential pairs for each named edge
    /// server. `pw_key` is the device's password-derived key; it masks
    /// the issued credentials and is not retained.
    pub fn register_device<R: RngCore + ?Sized>(
        &mut self,
        user_id: &str,
        device_id: &str,
        pw_key: Digest,
        edges: &[String],
        pseudonym_count: u32,
        rng: &mut R,
    ) -> Result<WireMessage, TaError> {
        self.ops += 1;
        let key = (user_id.to_string(), device_id.to_string());
        if self.devices.contains_key(&key) {
            return Err(TaError::DuplicateRegistration(format!(
                "{user_id}/{device_id}"
            )));
        }
        if pseudonym_count == 0 {
            return Err(TaError::InvalidCount);
        }
        for eid in edges {
            if !self.edges.contains_key(eid) {
                return Err(TaError::UnknownEdge(eid.clone()));
            }
        }
        let keys = KeyPair::generate(rng);
        let did = self.meter.hash(&[
            &canon_var(user_id.as_bytes()),
            &canon_var(device_id.as_bytes()),
            self.secret.as_bytes(),
        ]);
        let base = self.clock.now().0;
        let mut bundles = Vec::with_capacity(edges.len());
        let mut pid_sets = Vec::with_capacity(edges.len());
        for eid in edges {
            let edge_pk = self.edges[eid].public_key;
            let edge_pk_hash = self.meter.hash(&[edge_pk.as_bytes()]);
            let edge_credential = self.server_credential(edge_pk);
            let mut pairs = Vec::with_capacity(pseudonym_count as usize);
            let mut pids = Vec::with_capacity(pseudonym_count as usize);
            for x in 0..pseudonym_count {
                let stamp = crate::crypto::Timestamp(base.wrapping_add(x));
                let pid = self.meter.hash(&[
                    did.as_bytes(),
                    edge_pk_hash.as_bytes(),
                    &stamp.to_bytes(),
                ]);
                let cred = self.meter.hash(&[pid.as_bytes(), edge_credential.as_bytes()]);
                pairs.push((pid, crate::crypto::xor(&pw_key, &cred)));
                pids.push(pid);
                self.trace_index.insert(
                    pid,
                    Traced {
                        user_id: user_id.into(),
                        device_id: device_id.into(),
                        did,
                    },
                );
            }
            bundles.push(EdgeBundle {
                edge_public_id: edge_pk_hash,
                pairs,
            });
            pid_sets.push((eid.clone(), pids));
        }
        self.devices.insert(
            key,
            DeviceRecord {
                did,
                public_key: keys.public,
                pids: pid_sets,
            },
        );
        Ok(WireMessage::RegisterDeviceResponse {
            did,
            secret_key: keys.secret,
            public_key: keys.public,
            bundles,
        })
    }

    /// Resolves a device pseudonym seen on the wire back to the user and
    /// device it was issued to. Only the authority can do this; nothing
    /// in the messages themselves links a pseudonym to an identity.
    /// Server pairing pseudonyms live in a separate namespace and are
    /// deliberately not resolvable here.
    pub fn trace(&mut self, pid: &Digest) -> Result<Traced, TaError> {
        self.ops += 1;
        self.trace_index.get(pid).cloned().ok_or(TaError::NotFound)
    }

    /// `h(s || h(PK))`, the long-term credential of a registered server.
    fn server_credential(&self, public_key: Digest) -> Digest {
        self.meter.hash(&[
            self.secret.as_bytes(),
            self.meter.hash(&[public_key.as_bytes()]).as_bytes(),
        ])
    }

    /// Long-term state as store records.
    pub fn snapshot(&self) -> Vec<Record> {
        let mut out = vec![
            snapshot::role_header("ta"),
            Record::new("secret").push_digest(&self.secret),
        ];
        for (cid, c) in &self.clouds {
            out.push(
                Record::new("cloud")
                    .push_str(cid)
                    .push_digest(&c.public_key),
            );
        }
        for (eid, e) in &self.edges {
            out.push(
                Record::new("edge")
                    .push_str(eid)
                    .push_digest(&e.public_key),
            );
            for (cid, pid) in &e.pids {
                out.push(
                    Record::new("edge-pid")
                        .push_str(eid)
                        .push_str(cid)
                        .push_digest(pid),
                );
            }
        }
        for ((uid, id), d) in &self.devices {
            out.push(
                Record::new("device")
                    .push_str(uid)
                    .push_str(id)
                    .push_digest(&d.did)
                    .push_digest(&d.public_key),
            );
            for (eid, pids) in &d.pids {
                for pid in pids {
                    out.push(
                        Record::new("device-pid")
                            .push_str(uid)
                            .push_str(id)
                            .push_str(eid)
                            .push_digest(pid),
                    );
                }
            }
        }
        out
    }

    /// Rebuilds the authority from store records. Caches and counters
    /// start fresh.
    pub fn restore(records: &[Record], clock: ClockHandle) -> Result<TrustAuthority, SnapshotError> {
        let body = snapshot::expect_role(records, "ta")?;
        let mut secret = None;
        let mut clouds = BTreeMap::new();
        let mut edges: BTreeMap<String, EdgeRecord> = BTreeMap::new();
        let mut devices: BTreeMap<(String, String), DeviceRecord> = BTreeMap::new();
        let mut trace_index = BTreeMap::new();
        for r in body {
            match r.kind.as_str() {
                "secret" => secret = Some(r.digest(0)?),
                "cloud" => {
                    clouds.insert(
                        r.string(0)?,
                        CloudRecord {
                            public_key: r.digest(1)?,
                        },
                    );
                }
                "edge" => {
                    edges.insert(
                        r.string(0)?,
                        EdgeRecord {
                            public_key: r.digest(1)?,
                            pids: Vec::new(),
                        },
                    );
                }
                "edge-pid" => {
                    let eid = r.string(0)?;
                    let pid = r.digest(2)?;
                    edges
                        .get_mut(&eid)
                        .ok_or(SnapshotError::BadRecord("edge-pid before edge"))?
                        .pids
                        .push((r.string(1)?, pid));
                }
                "device" => {
                    devices.insert(
                        (r.string(0)?, r.string(1)?),
                        DeviceRecord {
                            did: r.digest(2)?,
                            public_key: r.digest(3)?,
                            pids: Vec::new(),
                        },
                    );
                }
                "device-pid" => {
                    let uid = r.string(0)?;
                    let id = r.string(1)?;
                    let eid = r.string(2)?;
                    let pid = r.digest(3)?;
                    let dev = devices
                        .get_mut(&(uid.clone(), id.clone()))
                        .ok_or(SnapshotError::BadRecord("device-pid before device"))?;
                    match dev.pids.last_mut() {
                        Some((last_eid, pids)) if *last_eid == eid => pids.push(pid),
                        _ => dev.pids.push((eid, vec![pid])),
                    }
                    trace_index.insert(
                        pid,
                        Traced {
                            user_id: uid,
                            device_id: id,
                            did: dev.did,
                        },
                    );
                }
                _ => return Err(SnapshotError::BadRecord("unknown record kind")),
            }
        }
        Ok(TrustAuthority {
            secret: secret.ok_or(SnapshotError::MissingRecord("secret"))?,
            clock,
            meter: HashMeter::new(),
            clouds,
            edges,
            devices,
            trace_index,
            ops: 0,
        })
    }
}

impl std::fmt::Debug for TrustAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrustAuthority")
            .field("clouds", &self.clouds.len())
            .field("edges", &self.edges.len())
            .field("devices", &self.devices.len())
            .field("ops", &self.ops)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, xor, Clock, Timestamp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fixture() -> (TrustAuthority, ChaCha20Rng) {
        let clock = ClockHandle::new(Clock::starting_at(1_000));
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ta = TrustAuthority::setup(&mut rng, clock);
        (ta, rng)
    }

    #[test]
    fn setup_is_deterministic_under_seed() {
        let (ta1, _) = fixture();
        let (ta2, _) = fixture();
        assert_eq!(ta1.secret(), ta2.secret());
    }

    #[test]
    fn cloud_credential_matches_formula() {
        let (mut ta, mut rng) = fixture();
        let resp = ta.register_cloud("CS1", &mut rng).unwrap();
        let WireMessage::RegisterCsResponse {
            credential,
            secret_key,
            public_key,
        } = resp
        else {
            panic!("wrong variant");
        };
        assert_eq!(public_key, hash(&[b"pub", secret_key.as_bytes()]));
        let expect = hash(&[
            ta.secret().as_bytes(),
            hash(&[public_key.as_bytes()]).as_bytes(),
        ]);
        assert_eq!(credential, expect);
    }

    #[test]
    fn duplicate_registrations_are_rejected() {
        let (mut ta, mut rng) = fixture();
        ta.register_cloud("CS1", &mut rng).unwrap();
        assert_eq!(
            ta.register_cloud("CS1", &mut rng),
            Err(TaError::DuplicateRegistration("CS1".into()))
        );
        ta.register_edge("ES1", &["CS1".into()], &mut rng).unwrap();
        assert!(matches!(
            ta.register_edge("ES1", &[], &mut rng),
            Err(TaError::DuplicateRegistration(_))
        ));
        let pw = hash(&[b"pw"]);
        ta.register_device("u", "d", pw, &["ES1".into()], 4, &mut rng)
            .unwrap();
        assert!(matches!(
            ta.register_device("u", "d", pw, &["ES1".into()], 4, &mut rng),
            Err(TaError::DuplicateRegistration(_))
        ));
        // same device id under a different user is a different identity
        ta.register_device("u2", "d", pw, &["ES1".into()], 4, &mut rng)
            .unwrap();
    }

    #[test]
    fn edge_pairings_match_formulas() {
        let (mut ta, mut rng) = fixture();
        let cs = ta.register_cloud("CS1", &mut rng).unwrap();
        let WireMessage::RegisterCsResponse {
            credential: sc,
            public_key: cs_pk,
            ..
        } = cs
        else {
            panic!();
        };
        let es = ta
            .register_edge("ES1", &["CS1".into()], &mut rng)
            .unwrap();
        let WireMessage::RegisterEsResponse {
            credential,
            public_key,
            pairings,
            ..
        } = es
        else {
            panic!();
        };
        assert_eq!(
            credential,
            hash(&[
                ta.secret().as_bytes(),
                hash(&[public_key.as_bytes()]).as_bytes()
            ])
        );
        assert_eq!(pairings.len(), 1);
        let p = &pairings[0];
        let pid = hash(&[
            &canon_var(b"ES1"),
            hash(&[cs_pk.as_bytes()]).as_bytes(),
        ]);
        assert_eq!(p.pseudonym, pid);
        assert_eq!(p.credential, hash(&[pid.as_bytes(), sc.as_bytes()]));
    }

    #[test]
    fn unknown_references_are_rejected() {
        let (mut ta, mut rng) = fixture();
        assert_eq!(
            ta.register_edge("ES1", &["CS9".into()], &mut rng),
            Err(TaError::UnknownCloud("CS9".into()))
        );
        let pw = hash(&[b"pw"]);
        assert_eq!(
            ta.register_device("u", "d", pw, &["ES9".into()], 4, &mut rng),
            Err(TaError::UnknownEdge("ES9".into()))
        );
    }

    #[test]
    fn device_bundle_matches_formulas() {
        let (mut ta, mut rng) = fixture();
        ta.register_cloud("CS1", &mut rng).unwrap();
        let es = ta
            .register_edge("ES1", &["CS1".into()], &mut rng)
            .unwrap();
        let WireMessage::RegisterEsResponse {
            credential: se,
            public_key: es_pk,
            ..
        } = es
        else {
            panic!();
        };
        let pw_key = hash(&[&canon_var(b"alice"), &canon_var(b"hunter2")]);
        let resp = ta
            .register_device("alice", "dev0", pw_key, &["ES1".into()], 3, &mut rng)
            .unwrap();
        let WireMessage::RegisterDeviceResponse { did, bundles, .. } = resp else {
            panic!();
        };
        assert_eq!(
            did,
            hash(&[
                &canon_var(b"alice"),
                &canon_var(b"dev0"),
                ta.secret().as_bytes()
            ])
        );
        assert_eq!(bundles.len(), 1);
        let b = &bundles[0];
        assert_eq!(b.edge_public_id, hash(&[es_pk.as_bytes()]));
        assert_eq!(b.pairs.len(), 3);
        for (x, (pid, masked)) in b.pairs.iter().enumerate() {
            let stamp = Timestamp(1_000 + x as u32);
            let expect_pid = hash(&[
                did.as_bytes(),
                b.edge_public_id.as_bytes(),
                &stamp.to_bytes(),
            ]);
            assert_eq!(*pid, expect_pid);
            let cred = hash(&[pid.as_bytes(), se.as_bytes()]);
            assert_eq!(xor(masked, &cred), pw_key);
        }
    }

    #[test]
    fn zero_pseudonyms_is_invalid() {
        let (mut ta, mut rng) = fixture();
        ta.register_cloud("CS1", &mut rng).unwrap();
        ta.register_edge("ES1", &["CS1".into()], &mut rng).unwrap();
        assert_eq!(
            ta.register_device("u", "d", hash(&[b"p"]), &["ES1".into()], 0, &mut rng),
            Err(TaError::InvalidCount)
        );
    }

    #[test]
    fn trace_resolves_device_and_edge_pseudonyms() {
        let (mut ta, mut rng) = fixture();
        ta.register_cloud("CS1", &mut rng).unwrap();
        let es = ta
            .register_edge("ES1", &["CS1".into()], &mut rng)
            .unwrap();
        let WireMessage::RegisterEsResponse { pairings, .. } = es else {
            panic!();
        };
        let dev = ta
            .register_device("u", "d", hash(&[b"p"]), &["ES1".into()], 2, &mut rng)
            .unwrap();
        let WireMessage::RegisterDeviceResponse { bundles, .. } = dev else {
            panic!();
        };
        for (pid, _) in &bundles[0].pairs {
            let traced = ta.trace(pid).unwrap();
            assert_eq!(
                (traced.user_id.as_str(), traced.device_id.as_str()),
                ("u", "d")
            );
            assert_ne!(traced.did, Digest([0; 32]));
        }
        // Server pairing pseudonyms are a disjoint namespace.
        assert_eq!(ta.trace(&pairings[0].pseudonym), Err(TaError::NotFound));
        assert_eq!(ta.trace(&hash(&[b"nope"])), Err(TaError::NotFound));
    }

    #[test]
    fn operations_counter_tracks_every_call() {
        let (mut ta, mut rng) = fixture();
        assert_eq!(ta.operations(), 0);
        ta.register_cloud("CS1", &mut rng).unwrap();
        ta.register_edge("ES1", &["CS1".into()], &mut rng).unwrap();
        ta.register_device("u", "d", hash(&[b"p"]), &["ES1".into()], 1, &mut rng)
            .unwrap();
        let _ = ta.trace(&hash(&[b"nope"]));
        assert_eq!(ta.operations(), 4);
        // failures count as served operations too
        let _ = ta.register_cloud("CS1", &mut rng);
        assert_eq!(ta.operations(), 5);
    }

    #[test]
    fn snapshot_round_trip_preserves_registrations_and_tracing() {
        let (mut ta, mut rng) = fixture();
        ta.register_cloud("CS1", &mut rng).unwrap();
        ta.register_edge("ES1", &["CS1".into()], &mut rng).unwrap();
        let dev = ta
            .register_device("u", "d", hash(&[b"p"]), &["ES1".into()], 3, &mut rng)
            .unwrap();
        let WireMessage::RegisterDeviceResponse { bundles, .. } = dev else {
            panic!();
        };
        let records = ta.snapshot();
        let clock = ClockHandle::new(Clock::starting_at(2_000));
        let mut back = TrustAuthority::restore(&records, clock).unwrap();
        assert_eq!(back.secret(), ta.secret());
        assert_eq!(back.snapshot(), records);
        for (pid, _) in &bundles[0].pairs {
            assert!(matches!(back.trace(pid), Ok(Traced { .. })));
        }
        // restored registries still enforce uniqueness
        assert!(matches!(
            back.register_cloud("CS1", &mut rng),
            Err(TaError::DuplicateRegistration(_))
        ));
        // a device registered after restore chains onto the same secret
        back.register_device("u2", "d", hash(&[b"p"]), &["ES1".into()], 1, &mut rng)
            .unwrap();
    }

    #[test]
    fn handle_dispatches_and_rejects_non_registration() {
        let (mut ta, mut rng) = fixture();
        let resp = ta
            .handle(
                &WireMessage::RegisterCsRequest {
                    cloud_id: "CS1".into(),
                },
                &mut rng,
            )
            .unwrap();
        assert!(matches!(resp, WireMessage::RegisterCsResponse { .. }));
        let bogus = WireMessage::EdgeResponse {
            masked_nonce: hash(&[b"x"]),
            proof: hash(&[b"y"]),
            stamp: Timestamp(1),
        };
        assert_eq!(
            ta.handle(&bogus, &mut rng),
            Err(TaError::UnexpectedMessage("Msg2"))
        );
    }
}
