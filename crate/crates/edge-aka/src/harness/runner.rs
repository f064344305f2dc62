//! Deployment runner: builds every party from a [`Topology`], pumps
//! protocol messages through the open channel and executes scripted
//! actions, including the adversarial ones.
//!
//! The runner is single-threaded and fully deterministic under a fixed
//! topology seed: party key material, nonces and pseudonym draws all
//! come from one seeded stream, and the simulated clock only moves when
//! an action moves it. Two runs of the same scenario produce
//! byte-identical transcripts.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::caps::{Route, ServiceMap};
use crate::cloud::{CloudError, CloudServer};
use crate::crypto::{hash, random_nonce, xor, Clock, ClockHandle, Digest};
use crate::device::{password_key, Device, DeviceConfig, DeviceError, LoginToken};
use crate::edge::{EdgeError, EdgeOutcome, EdgeServer};
use crate::harness::channel::{transcript_text, Envelope, Party};
use crate::harness::metrics::{CostRecord, ExchangeCase};
use crate::harness::scenario::{
    Action, Expect, OutcomeKind, RouteTo, Scenario, ScenarioError, Topology,
};
use crate::ta::TrustAuthority;
use crate::wire::{canon_var, WireMessage};

/// How one pumped exchange (or standalone action) ended.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kind: OutcomeKind,
    /// Party where the exchange resolved; `None` for local actions.
    pub at: Option<Party>,
    pub detail: String,
}

impl RunOutcome {
    fn local(kind: OutcomeKind, detail: impl Into<String>) -> RunOutcome {
        RunOutcome {
            kind,
            at: None,
            detail: detail.into(),
        }
    }
}

/// Per-exchange routing memory: who started it, which edge it targets,
/// which cloud it grew to involve, and the accounted size of every
/// protocol message sent under its correlation id.
struct ExchangeRoute {
    device: usize,
    edge: usize,
    cloud: Option<usize>,
    bits: Vec<(String, u64)>,
}

enum ArmedKind {
    Tamper { offset: usize, mask: u8 },
    Truncate { len: usize },
    Replace,
}

/// A one-shot interceptor waiting for the next message with `tag`.
struct Armed {
    action_index: usize,
    message: String,
    tag: u8,
    kind: ArmedKind,
}

fn message_tag(name: &str) -> Option<u8> {
    match name {
        "Msg1" => Some(0x01),
        "Msg2" => Some(0x02),
        "Msg3" => Some(0x03),
        "Msg4" => Some(0x04),
        "Msg5" => Some(0x05),
        _ => None,
    }
}

fn device_outcome(e: &DeviceError) -> OutcomeKind {
    match e {
        DeviceError::LockedOut => OutcomeKind::RejectedLockedOut,
        DeviceError::BadCredentials | DeviceError::UnknownEdge => {
            OutcomeKind::RejectedBadCredentials
        }
        DeviceError::EmptyPseudonymPool => OutcomeKind::RejectedPoolExhausted,
        DeviceError::StaleMessage => OutcomeKind::RejectedStale,
        DeviceError::BadProof => OutcomeKind::RejectedProof,
        DeviceError::NoSession => OutcomeKind::RejectedNoSession,
        DeviceError::UnexpectedMessage(_) => OutcomeKind::RejectedUnexpected,
        DeviceError::BadRegistration => OutcomeKind::RejectedMalformed,
    }
}

fn edge_outcome(e: &EdgeError) -> OutcomeKind {
    match e {
        EdgeError::StaleMessage => OutcomeKind::RejectedStale,
        EdgeError::ReplayedMessage => OutcomeKind::RejectedReplay,
        EdgeError::BadProof => OutcomeKind::RejectedProof,
        EdgeError::UnknownService(_) | EdgeError::NoCloudPairing(_) => {
            OutcomeKind::RejectedUnknownService
        }
        EdgeError::NoSession => OutcomeKind::RejectedNoSession,
        EdgeError::UnexpectedMessage(_) => OutcomeKind::RejectedUnexpected,
        EdgeError::BadRegistration => OutcomeKind::RejectedMalformed,
    }
}

fn cloud_outcome(e: &CloudError) -> OutcomeKind {
    match e {
        CloudError::StaleMessage => OutcomeKind::RejectedStale,
        CloudError::ReplayedMessage => OutcomeKind::RejectedReplay,
        CloudError::BadProof => OutcomeKind::RejectedProof,
        CloudError::UnknownService(_) => OutcomeKind::RejectedUnknownService,
        CloudError::UnexpectedMessage(_) => OutcomeKind::RejectedUnexpected,
        CloudError::BadRegistration => OutcomeKind::RejectedMalformed,
    }
}

fn build_err<E: std::fmt::Display>(e: E) -> ScenarioError {
    ScenarioError::Build(e.to_string())
}

/// A live deployment under a single adversarial channel.
pub struct Runner {
    clock: Arc<Clock>,
    handle: ClockHandle,
    rng: ChaCha20Rng,
    ta: TrustAuthority,
    devices: Vec<Device>,
    device_names: Vec<String>,
    /// Current correct password per device; follows successful updates.
    passwords: Vec<String>,
    tokens: Vec<Option<LoginToken>>,
    stolen: Vec<Option<Vec<(Digest, Digest)>>>,
    edges: Vec<EdgeServer>,
    edge_ids: Vec<String>,
    edge_pub: Vec<Digest>,
    clouds: Vec<CloudServer>,
    cloud_ids: Vec<String>,
    transcript: Vec<Envelope>,
    queue: VecDeque<Envelope>,
    routes: BTreeMap<u64, ExchangeRoute>,
    armed: Vec<Armed>,
    next_corr: u64,
    last: Option<RunOutcome>,
    costs: Vec<CostRecord>,
}

impl Runner {
    /// Registers every party of `topology` with a fresh authority.
    pub fn new(topology: &Topology) -> Result<Runner, ScenarioError> {
        Scenario {
            topology: topology.clone(),
            script: Vec::new(),
        }
        .validate()?;

        let clock = Clock::starting_at(topology.start_time);
        let mut rng = ChaCha20Rng::seed_from_u64(topology.seed);
        let mut ta = TrustAuthority::setup(&mut rng, ClockHandle::new(clock.clone()));

        let mut clouds = Vec::new();
        let mut cloud_ids = Vec::new();
        for spec in &topology.clouds {
            let mut services = ServiceMap::new();
            for tag in &spec.services {
                services
                    .insert(tag, Route::Local)
                    .map_err(|e| ScenarioError::Build(format!("cloud `{}`: {e}", spec.id)))?;
            }
            let resp = ta.register_cloud(&spec.id, &mut rng).map_err(build_err)?;
            clouds.push(
                CloudServer::from_registration(
                    &spec.id,
                    &resp,
                    services,
                    ClockHandle::new(clock.clone()),
                    topology.freshness_window,
                )
                .map_err(build_err)?,
            );
            cloud_ids.push(spec.id.clone());
        }

        let mut edges = Vec::new();
        let mut edge_ids = Vec::new();
        let mut edge_pub = Vec::new();
        for spec in &topology.edges {
            let mut caps = ServiceMap::new();
            let mut pairing_list: Vec<String> = Vec::new();
            for r in &spec.routes {
                let route = match &r.to {
                    RouteTo::Local(_) => Route::Local,
                    RouteTo::Clouds(cids) => {
                        for cid in cids {
                            if !pairing_list.contains(cid) {
                                pairing_list.push(cid.clone());
                            }
                        }
                        Route::Clouds(cids.clone())
                    }
                };
                caps.insert(&r.tag, route)
                    .map_err(|e| ScenarioError::Build(format!("edge `{}`: {e}", spec.id)))?;
            }
            let resp = ta
                .register_edge(&spec.id, &pairing_list, &mut rng)
                .map_err(build_err)?;
            let server = EdgeServer::from_registration(
                &spec.id,
                &resp,
                caps,
                ClockHandle::new(clock.clone()),
                topology.freshness_window,
            )
            .map_err(build_err)?;
            edge_pub.push(server.public_id());
            edge_ids.push(spec.id.clone());
            edges.push(server);
        }

        let config = DeviceConfig {
            lockout_limit: topology.lockout_limit,
            freshness_window: topology.freshness_window,
            pool_mode: topology.pool_mode,
        };
        let mut devices = Vec::new();
        let mut device_names = Vec::new();
        let mut passwords = Vec::new();
        for spec in &topology.devices {
            let edge_list = spec.edges.clone().unwrap_or_else(|| edge_ids.clone());
            let resp = ta
                .register_device(
                    &spec.user,
                    &spec.device,
                    password_key(&spec.user, &spec.password),
                    &edge_list,
                    topology.pool_size,
                    &mut rng,
                )
                .map_err(build_err)?;
            devices.push(
                Device::from_registration(
                    &spec.user,
                    &spec.device,
                    &spec.password,
                    &resp,
                    ClockHandle::new(clock.clone()),
                    config.clone(),
                )
                .map_err(build_err)?,
            );
            device_names.push(spec.name());
            passwords.push(spec.password.clone());
        }

        let n_devices = devices.len();
        Ok(Runner {
            handle: ClockHandle::new(clock.clone()),
            clock,
            rng,
            ta,
            devices,
            device_names,
            passwords,
            tokens: vec![None; n_devices],
            stolen: vec![None; n_devices],
            edges,
            edge_ids,
            edge_pub,
            clouds,
            cloud_ids,
            transcript: Vec::new(),
            queue: VecDeque::new(),
            routes: BTreeMap::new(),
            armed: Vec::new(),
            next_corr: 1,
            last: None,
            costs: Vec::new(),
        })
    }

    pub fn ta(&self) -> &TrustAuthority {
        &self.ta
    }

    pub fn ta_mut(&mut self) -> &mut TrustAuthority {
        &mut self.ta
    }

    pub fn clock(&self) -> &Arc<Clock> {
        &self.clock
    }

    pub fn transcript(&self) -> &[Envelope] {
        &self.transcript
    }

    pub fn transcript_text(&self) -> String {
        transcript_text(&self.transcript)
    }

    /// Costs of every successful exchange so far, in run order.
    pub fn costs(&self) -> &[CostRecord] {
        &self.costs
    }

    pub fn device_index(&self, name: &str) -> Option<usize> {
        self.device_names.iter().position(|n| n == name)
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edge_ids.iter().position(|n| n == id)
    }

    pub fn cloud_index(&self, id: &str) -> Option<usize> {
        self.cloud_ids.iter().position(|n| n == id)
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.device_index(name).map(|i| &self.devices[i])
    }

    /// Mutable device access for out-of-band actions (e.g. a local
    /// password change). The runner's cached login token is dropped so
    /// the next exchange logs in fresh.
    pub fn device_mut(&mut self, name: &str) -> Option<&mut Device> {
        let i = self.device_index(name)?;
        self.tokens[i] = None;
        Some(&mut self.devices[i])
    }

    pub fn edge(&self, id: &str) -> Option<&EdgeServer> {
        self.edge_index(id).map(|i| &self.edges[i])
    }

    pub fn cloud(&self, id: &str) -> Option<&CloudServer> {
        self.cloud_index(id).map(|i| &self.clouds[i])
    }

    fn party_label(&self, party: Party) -> String {
        match party {
            Party::Device(i) => format!("device {}", self.device_names[i]),
            Party::Edge(i) => format!("edge {}", self.edge_ids[i]),
            Party::Cloud(i) => format!("cloud {}", self.cloud_ids[i]),
            Party::Adversary => "adversary".into(),
        }
    }

    fn resolve(&mut self, kind: OutcomeKind, at: Party, detail: String) {
        self.last = Some(RunOutcome {
            kind,
            at: Some(at),
            detail,
        });
    }

    /// Queues an honest protocol message and records its accounted size
    /// against the exchange.
    fn send(&mut self, src: Party, dst: Party, corr: u64, msg: &WireMessage) {
        if let Some(route) = self.routes.get_mut(&corr) {
            route
                .bits
                .push((msg.variant().to_string(), msg.accounted_bits()));
        }
        self.send_raw(src, dst, corr, msg.encode());
    }

    /// Queues raw bytes: injected, replayed or mutated traffic.
    fn send_raw(&mut self, src: Party, dst: Party, corr: u64, payload: Vec<u8>) {
        let env = Envelope {
            index: self.transcript.len() as u64,
            src,
            dst,
            corr,
            payload,
        };
        self.transcript.push(env.clone());
        self.queue.push_back(env);
    }

    /// Delivers queued messages until the channel drains, applying any
    /// armed interceptor whose message kind matches at delivery time.
    fn pump(&mut self) -> Result<(), ScenarioError> {
        while let Some(mut env) = self.queue.pop_front() {
            self.apply_armed(&mut env)?;
            self.deliver(env);
        }
        Ok(())
    }

    fn apply_armed(&mut self, env: &mut Envelope) -> Result<(), ScenarioError> {
        let Some(&orig_tag) = env.payload.first() else {
            return Ok(());
        };
        while let Some(pos) = self.armed.iter().position(|a| a.tag == orig_tag) {
            let armed = self.armed.remove(pos);
            match armed.kind {
                ArmedKind::Tamper { offset, mask } => {
                    if offset >= env.payload.len() {
                        return Err(ScenarioError::OffsetOutOfRange {
                            index: armed.action_index,
                            offset,
                        });
                    }
                    env.payload[offset] ^= mask;
                }
                ArmedKind::Truncate { len } => {
                    if len >= env.payload.len() {
                        return Err(ScenarioError::BadTruncation {
                            index: armed.action_index,
                            len,
                        });
                    }
                    env.payload.truncate(len);
                }
                ArmedKind::Replace => {
                    let forged = self.forged_message(&armed.message);
                    env.payload = forged.encode();
                }
            }
        }
        Ok(())
    }

    /// A well-formed message of the named kind with random fields and a
    /// fresh stamp, as an adversary without any keys would build it.
    fn forged_message(&mut self, name: &str) -> WireMessage {
        let stamp = self.handle.now();
        let service = b"probe:forged".to_vec();
        match name {
            "Msg1" => WireMessage::AuthRequest {
                service,
                pseudonym: random_nonce(&mut self.rng),
                masked_nonce: random_nonce(&mut self.rng),
                proof: random_nonce(&mut self.rng),
                stamp,
            },
            "Msg2" => WireMessage::EdgeResponse {
                masked_nonce: random_nonce(&mut self.rng),
                proof: random_nonce(&mut self.rng),
                stamp,
            },
            "Msg3" => WireMessage::CloudRequest {
                service,
                pseudonym: random_nonce(&mut self.rng),
                masked_share: random_nonce(&mut self.rng),
                proof: random_nonce(&mut self.rng),
                stamp,
            },
            "Msg4" => WireMessage::CloudResponse {
                masked_share: random_nonce(&mut self.rng),
                proof: random_nonce(&mut self.rng),
                stamp,
            },
            "Msg5" => WireMessage::EdgeRelay {
                masked_share: random_nonce(&mut self.rng),
                proof: random_nonce(&mut self.rng),
                stamp,
            },
            other => unreachable!("validated message name {other}"),
        }
    }

    fn deliver(&mut self, env: Envelope) {
        let corr = env.corr;
        if env.dst == Party::Adversary {
            // A server answered traffic the adversary originated; that
            // only happens when a forgery was accepted.
            let detail = format!("{} answered a forged message", self.party_label(env.src));
            self.resolve(OutcomeKind::Success, env.src, detail);
            return;
        }
        let msg = match WireMessage::decode(&env.payload) {
            Ok(m) => m,
            Err(e) => {
                let detail = format!("{} could not decode: {e}", self.party_label(env.dst));
                self.resolve(OutcomeKind::RejectedMalformed, env.dst, detail);
                return;
            }
        };
        match env.dst {
            Party::Edge(i) => self.deliver_to_edge(i, env.src, corr, msg),
            Party::Cloud(i) => self.deliver_to_cloud(i, env.src, corr, msg),
            Party::Device(i) => self.deliver_to_device(i, corr, msg),
            Party::Adversary => unreachable!(),
        }
    }

    fn deliver_to_edge(&mut self, i: usize, src: Party, corr: u64, msg: WireMessage) {
        let here = Party::Edge(i);
        match &msg {
            WireMessage::AuthRequest { .. } => {
                match self.edges[i].handle_request(corr, &msg, &mut self.rng) {
                    Ok(EdgeOutcome::Direct(reply)) => self.send(here, src, corr, &reply),
                    Ok(EdgeOutcome::Relay { cloud_id, message }) => {
                        match self.cloud_ids.iter().position(|c| *c == cloud_id) {
                            Some(ci) => {
                                if let Some(route) = self.routes.get_mut(&corr) {
                                    route.cloud = Some(ci);
                                }
                                self.send(here, Party::Cloud(ci), corr, &message);
                            }
                            None => {
                                let detail = format!(
                                    "{} routed to unregistered cloud `{cloud_id}`",
                                    self.party_label(here)
                                );
                                self.resolve(OutcomeKind::RejectedUnknownService, here, detail);
                            }
                        }
                    }
                    Err(e) => {
                        let detail = format!("{} rejected Msg1: {e}", self.party_label(here));
                        self.resolve(edge_outcome(&e), here, detail);
                    }
                }
            }
            WireMessage::CloudResponse { .. } => {
                match self.edges[i].handle_cloud_response(corr, &msg) {
                    Ok(reply) => {
                        let dst = self
                            .routes
                            .get(&corr)
                            .map(|r| Party::Device(r.device))
                            .unwrap_or(Party::Adversary);
                        self.send(here, dst, corr, &reply);
                    }
                    Err(e) => {
                        let detail = format!("{} rejected Msg4: {e}", self.party_label(here));
                        self.resolve(edge_outcome(&e), here, detail);
                    }
                }
            }
            other => {
                let detail = format!(
                    "{} got unexpected {}",
                    self.party_label(here),
                    other.variant()
                );
                self.resolve(OutcomeKind::RejectedUnexpected, here, detail);
            }
        }
    }

    fn deliver_to_cloud(&mut self, i: usize, src: Party, corr: u64, msg: WireMessage) {
        let here = Party::Cloud(i);
        match &msg {
            WireMessage::CloudRequest { .. } => {
                match self.clouds[i].handle_relay(corr, &msg, &mut self.rng) {
                    Ok(reply) => self.send(here, src, corr, &reply),
                    Err(e) => {
                        let detail = format!("{} rejected Msg3: {e}", self.party_label(here));
                        self.resolve(cloud_outcome(&e), here, detail);
                    }
                }
            }
            other => {
                let detail = format!(
                    "{} got unexpected {}",
                    self.party_label(here),
                    other.variant()
                );
                self.resolve(OutcomeKind::RejectedUnexpected, here, detail);
            }
        }
    }

    fn deliver_to_device(&mut self, i: usize, corr: u64, msg: WireMessage) {
        let here = Party::Device(i);
        let result = match &msg {
            WireMessage::EdgeResponse { .. } => self.devices[i].complete_direct(corr, &msg),
            WireMessage::EdgeRelay { .. } => self.devices[i].complete_relayed(corr, &msg),
            other => Err(DeviceError::UnexpectedMessage(other.variant())),
        };
        match result {
            Ok(key) => {
                // The peer that derived the key: the cloud on relayed
                // exchanges, the edge on direct ones. The edge's copy on
                // relayed runs is implied by both proof checks passing.
                let peer = match self.routes.get(&corr) {
                    Some(route) => match route.cloud {
                        Some(ci) => self.clouds[ci]
                            .take_session_key(corr)
                            .map(|k| (k, self.party_label(Party::Cloud(ci)))),
                        None => self.edges[route.edge]
                            .take_session_key(corr)
                            .map(|k| (k, self.party_label(Party::Edge(route.edge)))),
                    },
                    None => None,
                };
                match peer {
                    Some((peer_key, who)) if peer_key == key => {
                        let detail =
                            format!("key {} agreed with {who}", key.fingerprint());
                        self.resolve(OutcomeKind::Success, here, detail);
                    }
                    Some((peer_key, who)) => {
                        let detail = format!(
                            "device key {} differs from {who} key {}",
                            key.fingerprint(),
                            peer_key.fingerprint()
                        );
                        self.resolve(OutcomeKind::KeyMismatch, here, detail);
                    }
                    None => {
                        let detail = "no peer recorded a session key".to_string();
                        self.resolve(OutcomeKind::KeyMismatch, here, detail);
                    }
                }
            }
            Err(e) => {
                let detail = format!("{} rejected reply: {e}", self.party_label(here));
                self.resolve(device_outcome(&e), here, detail);
            }
        }
    }

    fn token_for(&mut self, d: usize) -> Result<LoginToken, DeviceError> {
        if self.tokens[d].is_none() {
            let user = self.devices[d].user_id().to_string();
            let password = self.passwords[d].clone();
            let token = self.devices[d].login(&user, &password)?;
            self.tokens[d] = Some(token);
        }
        Ok(self.tokens[d].clone().expect("token cached"))
    }

    /// One full exchange, pumped to completion. Advances the clock one
    /// second first so every run carries a distinct stamp.
    pub fn run_auth(&mut self, d: usize, e: usize, service: &[u8]) -> RunOutcome {
        self.clock.advance(1);
        let token = match self.token_for(d) {
            Ok(t) => t,
            Err(err) => {
                return RunOutcome {
                    kind: device_outcome(&err),
                    at: Some(Party::Device(d)),
                    detail: format!("login failed: {err}"),
                }
            }
        };
        let corr = self.next_corr;
        self.next_corr += 1;
        self.routes.insert(
            corr,
            ExchangeRoute {
                device: d,
                edge: e,
                cloud: None,
                bits: Vec::new(),
            },
        );
        let device_before = self.devices[d].meter().calls();
        let edge_before = self.edges[e].meter().calls();
        let clouds_before: Vec<u64> = self.clouds.iter().map(|c| c.meter().calls()).collect();

        let edge_pub = self.edge_pub[e];
        let request =
            match self.devices[d].begin_auth(&token, &edge_pub, service, corr, &mut self.rng) {
                Ok(msg) => msg,
                Err(err) => {
                    return RunOutcome {
                        kind: device_outcome(&err),
                        at: Some(Party::Device(d)),
                        detail: format!("could not start: {err}"),
                    }
                }
            };
        self.last = None;
        self.send(Party::Device(d), Party::Edge(e), corr, &request);
        if let Err(fault) = self.pump() {
            return RunOutcome::local(OutcomeKind::Neutral, format!("channel fault: {fault}"));
        }
        let outcome = self.last.take().unwrap_or_else(|| {
            RunOutcome::local(OutcomeKind::Neutral, "exchange did not resolve")
        });
        if outcome.kind == OutcomeKind::Success {
            let route = &self.routes[&corr];
            let cloud_hashes: u64 = self
                .clouds
                .iter()
                .zip(&clouds_before)
                .map(|(c, before)| c.meter().calls() - before)
                .sum();
            self.costs.push(CostRecord {
                case: if route.cloud.is_some() {
                    ExchangeCase::Relayed
                } else {
                    ExchangeCase::Direct
                },
                device_hashes: self.devices[d].meter().calls() - device_before,
                edge_hashes: self.edges[e].meter().calls() - edge_before,
                cloud_hashes,
                message_bits: route.bits.clone(),
            });
        }
        outcome
    }

    /// Re-sends a (possibly mutated) copy of transcript entry `index` to
    /// its original destination and pumps the fallout.
    fn reinject(
        &mut self,
        action_index: usize,
        index: u64,
        mutate: impl FnOnce(&mut Vec<u8>),
    ) -> Result<RunOutcome, ScenarioError> {
        let Some(orig) = self.transcript.get(index as usize).cloned() else {
            return Err(ScenarioError::UnknownIndex {
                index: action_index,
                want: index,
            });
        };
        let mut payload = orig.payload;
        mutate(&mut payload);
        self.last = None;
        self.send_raw(orig.src, orig.dst, orig.corr, payload);
        self.pump()?;
        Ok(self.last.take().unwrap_or_else(|| {
            RunOutcome::local(OutcomeKind::Neutral, "delivery did not resolve")
        }))
    }

    fn entry_len(&self, action_index: usize, index: u64) -> Result<usize, ScenarioError> {
        self.transcript
            .get(index as usize)
            .map(|env| env.payload.len())
            .ok_or(ScenarioError::UnknownIndex {
                index: action_index,
                want: index,
            })
    }

    /// Re-sends transcript entry `index` verbatim.
    pub fn replay_entry(&mut self, index: u64) -> Result<RunOutcome, ScenarioError> {
        self.reinject(0, index, |_| {})
    }

    /// Re-sends transcript entry `index` with one byte xored by `mask`.
    pub fn tamper_entry(
        &mut self,
        index: u64,
        offset: usize,
        mask: u8,
    ) -> Result<RunOutcome, ScenarioError> {
        self.tamper_entry_at(0, index, offset, mask)
    }

    fn tamper_entry_at(
        &mut self,
        action_index: usize,
        index: u64,
        offset: usize,
        mask: u8,
    ) -> Result<RunOutcome, ScenarioError> {
        if offset >= self.entry_len(action_index, index)? {
            return Err(ScenarioError::OffsetOutOfRange {
                index: action_index,
                offset,
            });
        }
        self.reinject(action_index, index, |p| p[offset] ^= mask)
    }

    /// Re-sends transcript entry `index` cut down to `len` bytes.
    pub fn truncate_entry(&mut self, index: u64, len: usize) -> Result<RunOutcome, ScenarioError> {
        self.truncate_entry_at(0, index, len)
    }

    fn truncate_entry_at(
        &mut self,
        action_index: usize,
        index: u64,
        len: usize,
    ) -> Result<RunOutcome, ScenarioError> {
        if len >= self.entry_len(action_index, index)? {
            return Err(ScenarioError::BadTruncation {
                index: action_index,
                len,
            });
        }
        self.reinject(action_index, index, |p| p.truncate(len))
    }

    fn arm(
        &mut self,
        action_index: usize,
        message: &str,
        kind: ArmedKind,
    ) -> Result<(), ScenarioError> {
        let tag = message_tag(message).ok_or_else(|| ScenarioError::BadMessageName {
            index: action_index,
            name: message.into(),
        })?;
        self.armed.push(Armed {
            action_index,
            message: message.into(),
            tag,
            kind,
        });
        Ok(())
    }

    /// Arms a one-shot bit flip on the next in-flight message of a kind.
    pub fn arm_tamper(&mut self, message: &str, offset: usize, mask: u8) -> Result<(), ScenarioError> {
        self.arm(0, message, ArmedKind::Tamper { offset, mask })
    }

    /// Arms a one-shot truncation on the next in-flight message of a kind.
    pub fn arm_truncate(&mut self, message: &str, len: usize) -> Result<(), ScenarioError> {
        self.arm(0, message, ArmedKind::Truncate { len })
    }

    /// Arms a one-shot replacement of the next in-flight message of a
    /// kind by a random forgery.
    pub fn arm_forge(&mut self, message: &str) -> Result<(), ScenarioError> {
        self.arm(0, message, ArmedKind::Replace)
    }

    /// Sends a random well-formed message of the named kind to a server,
    /// as a credential-less impersonator, and pumps the fallout.
    pub fn inject(&mut self, target: Party, message: &str) -> Result<RunOutcome, ScenarioError> {
        self.inject_at(0, target, message)
    }

    fn inject_at(
        &mut self,
        action_index: usize,
        target: Party,
        message: &str,
    ) -> Result<RunOutcome, ScenarioError> {
        if message_tag(message).is_none() {
            return Err(ScenarioError::BadMessageName {
                index: action_index,
                name: message.into(),
            });
        }
        let edge = match target {
            Party::Edge(e) => e,
            Party::Cloud(_) => 0,
            other => {
                return Err(ScenarioError::Build(format!(
                    "forgeries target servers, not {other}"
                )))
            }
        };
        let forged = self.forged_message(message);
        let corr = self.next_corr;
        self.next_corr += 1;
        self.routes.insert(
            corr,
            ExchangeRoute {
                device: 0,
                edge,
                cloud: None,
                bits: Vec::new(),
            },
        );
        self.last = None;
        self.send_raw(Party::Adversary, target, corr, forged.encode());
        self.pump()?;
        Ok(self.last.take().unwrap_or_else(|| {
            RunOutcome::local(OutcomeKind::Neutral, "injection did not resolve")
        }))
    }

    /// Copies the device's persistent store for the adversary.
    pub fn steal_device(&mut self, d: usize) {
        let mut pairs = Vec::new();
        for record in self.devices[d].snapshot() {
            if record.kind == "pair" {
                if let (Ok(pid), Ok(masked)) = (record.digest(0), record.digest(1)) {
                    pairs.push((pid, masked));
                }
            }
        }
        self.stolen[d] = Some(pairs);
    }

    /// Local login attempt against a device store.
    pub fn login_device(&mut self, d: usize, password: &str) -> RunOutcome {
        let user = self.devices[d].user_id().to_string();
        match self.devices[d].login(&user, password) {
            Ok(token) => {
                self.tokens[d] = Some(token);
                RunOutcome::local(OutcomeKind::Success, "login accepted")
            }
            Err(e) => RunOutcome::local(device_outcome(&e), format!("login rejected: {e}")),
        }
    }

    /// Forged exchange starts from a stolen store: every attempt guesses
    /// the password key that unmasks a stored credential. Returns how
    /// many of `attempts` the edge server accepted.
    pub fn forge_with_stolen(
        &mut self,
        d: usize,
        e: usize,
        service: &[u8],
        attempts: u32,
    ) -> Result<(u32, RunOutcome), ScenarioError> {
        let Some(pairs) = self.stolen[d].clone() else {
            return Err(ScenarioError::Build(format!(
                "device {} was never stolen",
                self.device_names[d]
            )));
        };
        let mut accepted = 0u32;
        for n in 0..attempts {
            self.clock.advance(1);
            let (pseudonym, masked_credential) = pairs[n as usize % pairs.len()];
            let guess = random_nonce(&mut self.rng);
            let credential_guess = xor(&masked_credential, &guess);
            let nonce = random_nonce(&mut self.rng);
            let stamp = self.handle.now();
            let proof = hash(&[
                &canon_var(service),
                pseudonym.as_bytes(),
                nonce.as_bytes(),
                &stamp.to_bytes(),
            ]);
            let msg = WireMessage::AuthRequest {
                service: service.to_vec(),
                pseudonym,
                masked_nonce: xor(&credential_guess, &nonce),
                proof,
                stamp,
            };
            let corr = self.next_corr;
            self.next_corr += 1;
            self.routes.insert(
                corr,
                ExchangeRoute {
                    device: d,
                    edge: e,
                    cloud: None,
                    bits: Vec::new(),
                },
            );
            self.last = None;
            self.send_raw(Party::Adversary, Party::Edge(e), corr, msg.encode());
            self.pump()?;
            // Accepted means the edge acted on the request: it stored a
            // direct key or opened a relay toward a cloud.
            let opened_relay = self.routes[&corr].cloud.is_some();
            if self.edges[e].take_session_key(corr).is_some() || opened_relay {
                accepted += 1;
            }
        }
        let kind = if accepted == 0 {
            OutcomeKind::AllRejected
        } else {
            OutcomeKind::Success
        };
        let detail = format!("{attempts} forged starts, {accepted} accepted");
        Ok((accepted, RunOutcome::local(kind, detail)))
    }

    /// Runs one scripted action. Errors are scenario-level faults; every
    /// protocol-level result comes back as a [`RunOutcome`].
    pub fn run_action(
        &mut self,
        index: usize,
        action: &Action,
    ) -> Result<RunOutcome, ScenarioError> {
        match action {
            Action::Login {
                device, password, ..
            } => {
                let d = self.need_device(index, device)?;
                let pw = password.clone().unwrap_or_else(|| self.passwords[d].clone());
                Ok(self.login_device(d, &pw))
            }
            Action::Auth {
                device,
                edge,
                service,
                ..
            } => {
                let d = self.need_device(index, device)?;
                let e = self.need_edge(index, edge)?;
                Ok(self.run_auth(d, e, service.as_bytes()))
            }
            Action::TamperNext {
                message,
                offset,
                mask,
            } => {
                self.arm(
                    index,
                    message,
                    ArmedKind::Tamper {
                        offset: *offset,
                        mask: *mask,
                    },
                )?;
                Ok(RunOutcome::local(
                    OutcomeKind::Neutral,
                    format!("armed tamper on next {message}"),
                ))
            }
            Action::TruncateNext { message, len } => {
                self.arm(index, message, ArmedKind::Truncate { len: *len })?;
                Ok(RunOutcome::local(
                    OutcomeKind::Neutral,
                    format!("armed truncation on next {message}"),
                ))
            }
            Action::ForgeNext { message } => {
                self.arm(index, message, ArmedKind::Replace)?;
                Ok(RunOutcome::local(
                    OutcomeKind::Neutral,
                    format!("armed replacement of next {message}"),
                ))
            }
            Action::Tamper {
                index: at,
                offset,
                mask,
                ..
            } => self.tamper_entry_at(index, *at, *offset, *mask),
            Action::Truncate { index: at, len, .. } => self.truncate_entry_at(index, *at, *len),
            Action::Replay { index: at, .. } => self.reinject(index, *at, |_| {}),
            Action::AdvanceClock { secs } => {
                self.clock.advance(*secs);
                Ok(RunOutcome::local(
                    OutcomeKind::Neutral,
                    format!("clock advanced {secs}s"),
                ))
            }
            Action::StealDevice { device } => {
                let d = self.need_device(index, device)?;
                self.steal_device(d);
                Ok(RunOutcome::local(
                    OutcomeKind::Neutral,
                    "device store copied by the adversary",
                ))
            }
            Action::ForgeWithStolen {
                device,
                edge,
                service,
                attempts,
                ..
            } => {
                let d = self.need_device(index, device)?;
                let e = self.need_edge(index, edge)?;
                let (_, outcome) = self.forge_with_stolen(d, e, service.as_bytes(), *attempts)?;
                Ok(outcome)
            }
            Action::InjectForged {
                target, message, ..
            } => {
                let dst = if let Some(e) = self.edge_index(target) {
                    Party::Edge(e)
                } else if let Some(c) = self.cloud_index(target) {
                    Party::Cloud(c)
                } else {
                    return Err(ScenarioError::UnknownTarget {
                        index,
                        name: target.clone(),
                    });
                };
                self.inject_at(index, dst, message)
            }
            Action::UpdatePassword {
                device, old, new, ..
            } => {
                let d = self.need_device(index, device)?;
                let user = self.devices[d].user_id().to_string();
                match self.devices[d].update_password(&user, old, new) {
                    Ok(()) => {
                        self.passwords[d] = new.clone();
                        self.tokens[d] = None;
                        Ok(RunOutcome::local(
                            OutcomeKind::Success,
                            "password updated, credentials re-masked in place",
                        ))
                    }
                    Err(e) => Ok(RunOutcome::local(
                        device_outcome(&e),
                        format!("update rejected: {e}"),
                    )),
                }
            }
        }
    }

    fn need_device(&self, index: usize, name: &str) -> Result<usize, ScenarioError> {
        self.device_index(name)
            .ok_or_else(|| ScenarioError::UnknownDevice {
                index,
                name: name.into(),
            })
    }

    fn need_edge(&self, index: usize, name: &str) -> Result<usize, ScenarioError> {
        self.edge_index(name)
            .ok_or_else(|| ScenarioError::UnknownEdge {
                index,
                name: name.into(),
            })
    }

    /// Interceptors still armed; a finished scenario must have none.
    fn unfired_interceptor(&self) -> Option<&Armed> {
        self.armed.first()
    }
}

/// Result of one scripted action, checked against its expectation.
#[derive(Debug, Clone)]
pub struct ActionOutcome {
    pub index: usize,
    pub label: String,
    pub expected: Option<Expect>,
    pub actual: OutcomeKind,
    pub detail: String,
    pub pass: bool,
}

/// Everything a finished scenario produced.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub outcomes: Vec<ActionOutcome>,
    pub costs: Vec<CostRecord>,
    pub transcript: String,
    pub passed: bool,
}

impl ScenarioReport {
    /// One line per action: PASS/FAIL, label, expectation and result.
    pub fn summary_lines(&self) -> Vec<String> {
        self.outcomes
            .iter()
            .map(|o| {
                let verdict = if o.pass { "PASS" } else { "FAIL" };
                let expected = o
                    .expected
                    .and_then(|e| serde_json::to_value(e).ok())
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_else(|| "-".into());
                format!(
                    "[{:>3}] {verdict} {} (expected {expected}, got {:?}: {})",
                    o.index, o.label, o.actual, o.detail
                )
            })
            .collect()
    }
}

fn action_label(action: &Action) -> String {
    match action {
        Action::Login { device, .. } => format!("login {device}"),
        Action::Auth {
            device,
            edge,
            service,
            ..
        } => format!("auth {device} -> {edge} [{service}]"),
        Action::TamperNext {
            message,
            offset,
            mask,
        } => format!("arm tamper {message} @{offset} ^{mask:#04x}"),
        Action::TruncateNext { message, len } => format!("arm truncate {message} to {len}"),
        Action::ForgeNext { message } => format!("arm forge {message}"),
        Action::Tamper { index, offset, .. } => format!("tamper #{index} @{offset}"),
        Action::Truncate { index, len, .. } => format!("truncate #{index} to {len}"),
        Action::Replay { index, .. } => format!("replay #{index}"),
        Action::AdvanceClock { secs } => format!("advance clock +{secs}s"),
        Action::StealDevice { device } => format!("steal {device}"),
        Action::ForgeWithStolen {
            device, attempts, ..
        } => format!("forge with stolen {device} x{attempts}"),
        Action::InjectForged {
            target, message, ..
        } => format!("inject forged {message} -> {target}"),
        Action::UpdatePassword { device, .. } => format!("update password {device}"),
    }
}

fn action_expectation(action: &Action) -> Option<Expect> {
    match action {
        Action::Login { expect, .. }
        | Action::Auth { expect, .. }
        | Action::Tamper { expect, .. }
        | Action::Truncate { expect, .. }
        | Action::Replay { expect, .. }
        | Action::ForgeWithStolen { expect, .. }
        | Action::InjectForged { expect, .. }
        | Action::UpdatePassword { expect, .. } => Some(*expect),
        Action::TamperNext { .. }
        | Action::TruncateNext { .. }
        | Action::ForgeNext { .. }
        | Action::AdvanceClock { .. }
        | Action::StealDevice { .. } => None,
    }
}

/// Validates, builds and runs a whole scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    scenario.validate()?;
    let mut runner = Runner::new(&scenario.topology)?;
    let mut outcomes = Vec::new();
    for (index, action) in scenario.script.iter().enumerate() {
        let outcome = runner.run_action(index, action)?;
        let expected = action_expectation(action);
        let pass = expected.map_or(true, |e| e.matches(outcome.kind));
        outcomes.push(ActionOutcome {
            index,
            label: action_label(action),
            expected,
            actual: outcome.kind,
            detail: outcome.detail,
            pass,
        });
    }
    if let Some(armed) = runner.unfired_interceptor() {
        return Err(ScenarioError::UnfiredInterceptor {
            message: armed.message.clone(),
        });
    }
    let passed = outcomes.iter().all(|o| o.pass);
    Ok(ScenarioReport {
        outcomes,
        costs: runner.costs.clone(),
        transcript: runner.transcript_text(),
        passed,
    })
}

/// Outcome of a concurrent soak run.
#[derive(Debug)]
pub struct StressReport {
    pub runs: u64,
    pub established: u64,
    /// Every run that did not end in matching keys.
    pub failures: Vec<String>,
}

/// Runs `total_runs` honest exchanges across `workers` threads. Devices
/// are partitioned over workers; edge and cloud servers are shared
/// behind locks, the clock advances one second per run. The topology
/// window must cover `total_runs` seconds or late deliveries would go
/// stale; callers pick a window accordingly.
pub fn run_stress(
    topology: &Topology,
    total_runs: u64,
    workers: usize,
) -> Result<StressReport, ScenarioError> {
    let mut runner = Runner::new(topology)?;
    let n_devices = runner.devices.len();
    let workers = workers.clamp(1, n_devices.max(1));

    // Per-device service plan: (edge index, service tag) pairs cycling
    // over every route the device can reach.
    let mut plans: Vec<Vec<(usize, String)>> = Vec::with_capacity(n_devices);
    for (d, spec) in topology.devices.iter().enumerate() {
        let allowed: Vec<usize> = match &spec.edges {
            Some(list) => list
                .iter()
                .filter_map(|id| runner.edge_index(id))
                .collect(),
            None => (0..runner.edges.len()).collect(),
        };
        let mut plan = Vec::new();
        for &e in &allowed {
            for entry in &topology.edges[e].routes {
                plan.push((e, entry.tag.clone()));
            }
        }
        if plan.is_empty() {
            return Err(ScenarioError::Build(format!(
                "device {} reaches no routes",
                runner.device_names[d]
            )));
        }
        plans.push(plan);
    }

    // Log every device in before splitting state across threads.
    let mut tokens = Vec::with_capacity(n_devices);
    for d in 0..n_devices {
        tokens.push(runner.token_for(d).map_err(build_err)?);
    }

    let clock = runner.clock.clone();
    let edge_pub_list = runner.edge_pub.clone();
    let edges: Arc<Vec<Mutex<EdgeServer>>> =
        Arc::new(runner.edges.into_iter().map(Mutex::new).collect());
    let clouds: Arc<Vec<Mutex<CloudServer>>> =
        Arc::new(runner.clouds.into_iter().map(Mutex::new).collect());
    let cloud_ids = Arc::new(runner.cloud_ids);
    let corr_source = Arc::new(AtomicU64::new(1));
    let mut seed_source = runner.rng;

    // Deal devices round-robin onto workers.
    let mut shares: Vec<Vec<(usize, Device, LoginToken)>> = (0..workers).map(|_| Vec::new()).collect();
    for (d, (device, token)) in runner.devices.into_iter().zip(tokens).enumerate() {
        shares[d % workers].push((d, device, token));
    }

    let per_worker = total_runs / workers as u64;
    let remainder = total_runs % workers as u64;

    let results: Vec<(u64, Vec<String>)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, share) in shares.into_iter().enumerate() {
            let runs = per_worker + u64::from((w as u64) < remainder);
            let mut rng = ChaCha20Rng::seed_from_u64(seed_source.next_u64());
            let clock = clock.clone();
            let edges = edges.clone();
            let clouds = clouds.clone();
            let cloud_ids = cloud_ids.clone();
            let corr_source = corr_source.clone();
            let plans = &plans;
            let edge_pub = &edge_pub_list;
            handles.push(scope.spawn(move || {
                let mut share = share;
                let mut established = 0u64;
                let mut failures = Vec::new();
                if share.is_empty() {
                    return (established, failures);
                }
                for n in 0..runs {
                    let slot = (n as usize) % share.len();
                    let (d, device, token) = &mut share[slot];
                    let plan = &plans[*d];
                    let (e, tag) = &plan[(n as usize) % plan.len()];
                    let service = format!("{tag}:soak{n}");
                    clock.advance(1);
                    let corr = corr_source.fetch_add(1, Ordering::Relaxed);
                    let request = match device.begin_auth(
                        token,
                        &edge_pub[*e],
                        service.as_bytes(),
                        corr,
                        &mut rng,
                    ) {
                        Ok(m) => m,
                        Err(err) => {
                            failures.push(format!("run {n}: start failed: {err}"));
                            continue;
                        }
                    };
                    let outcome = {
                        let mut edge = edges[*e].lock().expect("edge lock");
                        edge.handle_request(corr, &request, &mut rng)
                    };
                    let (device_key, peer_key) = match outcome {
                        Ok(EdgeOutcome::Direct(reply)) => {
                            let peer = edges[*e]
                                .lock()
                                .expect("edge lock")
                                .take_session_key(corr);
                            match device.complete_direct(corr, &reply) {
                                Ok(k) => (k, peer),
                                Err(err) => {
                                    failures.push(format!("run {n}: direct finish: {err}"));
                                    continue;
                                }
                            }
                        }
                        Ok(EdgeOutcome::Relay { cloud_id, message }) => {
                            let ci = cloud_ids
                                .iter()
                                .position(|c| *c == cloud_id)
                                .expect("registered cloud");
                            let relayed = {
                                let mut cloud = clouds[ci].lock().expect("cloud lock");
                                cloud.handle_relay(corr, &message, &mut rng)
                            };
                            let reply = match relayed {
                                Ok(m) => m,
                                Err(err) => {
                                    failures.push(format!("run {n}: cloud: {err}"));
                                    continue;
                                }
                            };
                            let forwarded = {
                                let mut edge = edges[*e].lock().expect("edge lock");
                                edge.handle_cloud_response(corr, &reply)
                            };
                            let relay = match forwarded {
                                Ok(m) => m,
                                Err(err) => {
                                    failures.push(format!("run {n}: edge relay: {err}"));
                                    continue;
                                }
                            };
                            let peer = clouds[ci]
                                .lock()
                                .expect("cloud lock")
                                .take_session_key(corr);
                            match device.complete_relayed(corr, &relay) {
                                Ok(k) => (k, peer),
                                Err(err) => {
                                    failures.push(format!("run {n}: relayed finish: {err}"));
                                    continue;
                                }
                            }
                        }
                        Err(err) => {
                            failures.push(format!("run {n}: edge: {err}"));
                            continue;
                        }
                    };
                    match peer_key {
                        Some(k) if k == device_key => established += 1,
                        Some(_) => failures.push(format!("run {n}: keys differ")),
                        None => failures.push(format!("run {n}: peer kept no key")),
                    }
                }
                (established, failures)
            }));
        }
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    });

    let mut established = 0;
    let mut failures = Vec::new();
    for (ok, fail) in results {
        established += ok;
        failures.extend(fail);
    }
    Ok(StressReport {
        runs: total_runs,
        established,
        failures,
    })
}
