//! Edge server role: verifies device requests, answers locally when it
//! can serve the request, and otherwise relays toward a capable cloud
//! server while blinding the device from it.
//!
//! The server never looks devices up in a directory. A request's
//! pseudonym alone lets it derive the device-side credential
//! `A = h(pid || SE)` from its own long-term credential, which both
//! authenticates the device (the request proof is keyed by the nonce
//! hidden under `A`) and keys the rest of the exchange.
//!
//! Replay protection is a cache of accepted (pseudonym, stamp) pairs
//! inside the freshness window. Entries are added only after a request
//! verifies.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::caps::{service_tag, Route, ServiceMap};
use crate::crypto::{
    fresh, hash, random_nonce, xor, ClockHandle, Digest, HashMeter, KeyPair, ReplayCache,
    SessionKey, Timestamp,
};
use crate::snapshot::{self, Record, SnapshotError};
use crate::wire::{canon_var, CloudPairing, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EdgeError {
    #[error("message timestamp outside the freshness window")]
    StaleMessage,
    #[error("request was already accepted inside the window")]
    ReplayedMessage,
    #[error("request proof check failed")]
    BadProof,
    #[error("no route for service tag `{0}`")]
    UnknownService(String),
    #[error("no registered pairing with any cloud server routing `{0}`")]
    NoCloudPairing(String),
    #[error("no pending relay with that correlation id")]
    NoSession,
    #[error("expected an authentication message, got {0}")]
    UnexpectedMessage(&'static str),
    #[error("registration response is malformed")]
    BadRegistration,
}

/// What the server did with a verified request.
#[derive(Debug)]
pub enum EdgeOutcome {
    /// Served locally: the response closes the exchange and the session
    /// key is established on both sides.
    Direct(WireMessage),
    /// Relayed: the request went to `cloud_id`; the exchange stays open
    /// until the cloud response comes back.
    Relay { cloud_id: String, message: WireMessage },
}

struct RelaySession {
    device_credential: Digest,
    device_share: Digest,
    relay_credential: Digest,
    started: Timestamp,
}

/// An edge server's registration state, routing table and live sessions.
pub struct EdgeServer {
    pub(crate) edge_id: String,
    pub(crate) credential: Digest,
    pub(crate) keys: KeyPair,
    pub(crate) pairings: Vec<CloudPairing>,
    capabilities: ServiceMap,
    window: u32,
    clock: ClockHandle,
    meter: HashMeter,
    replay: ReplayCache,
    relays: BTreeMap<u64, RelaySession>,
    established: BTreeMap<u64, SessionKey>,
}

impl EdgeServer {
    pub fn from_registration(
        edge_id: &str,
        response: &WireMessage,
        capabilities: ServiceMap,
        clock: ClockHandle,
        window: u32,
    ) -> Result<EdgeServer, EdgeError> {
        let WireMessage::RegisterEsResponse {
            credential,
            secret_key,
            public_key,
            pairings,
        } = response
        else {
            return Err(EdgeError::BadRegistration);
        };
        Ok(EdgeServer {
            edge_id: edge_id.into(),
            credential: *credential,
            keys: KeyPair {
                secret: *secret_key,
                public: *public_key,
            },
            pairings: pairings.clone(),
            capabilities,
            window,
            clock,
            meter: HashMeter::new(),
            replay: ReplayCache::new(),
            relays: BTreeMap::new(),
            established: BTreeMap::new(),
        })
    }

    pub fn edge_id(&self) -> &str {
        &self.edge_id
    }

    /// `h(PK)`, the identifier under which devices hold credentials for
    /// this server.
    pub fn public_id(&self) -> Digest {
        hash(&[self.keys.public.as_bytes()])
    }

    pub fn meter(&self) -> &HashMeter {
        &self.meter
    }

    pub fn capabilities(&self) -> &ServiceMap {
        &self.capabilities
    }

    /// Session key of a locally served exchange, removed from the table.
    pub fn take_session_key(&mut self, corr: u64) -> Option<SessionKey> {
        self.established.remove(&corr)
    }

    /// Verifies a device request and either answers it or relays it.
    pub fn handle_request<R: RngCore + ?Sized>(
        &mut self,
        corr: u64,
        request: &WireMessage,
        rng: &mut R,
    ) -> Result<EdgeOutcome, EdgeError> {
        let WireMessage::AuthRequest {
            service,
            pseudonym,
            masked_nonce,
            proof,
            stamp,
        } = request
        else {
            return Err(EdgeError::UnexpectedMessage(request.variant()));
        };
        let now = self.clock.now();
        if !fresh(*stamp, now, self.window) {
            return Err(EdgeError::StaleMessage);
        }
        self.replay.prune(now, self.window);
        if self.replay.contains(proof, *stamp) {
            return Err(EdgeError::ReplayedMessage);
        }
        let credential = self
            .meter
            .hash(&[pseudonym.as_bytes(), self.credential.as_bytes()]);
        let nonce = xor(&credential, masked_nonce);
        let check = self.meter.hash(&[
            &canon_var(service),
            pseudonym.as_bytes(),
            nonce.as_bytes(),
            &stamp.to_bytes(),
        ]);
        if check != *proof {
            return Err(EdgeError::BadProof);
        }
        self.replay.insert(proof, *stamp);

        let tag = service_tag(service)
            .ok_or_else(|| EdgeError::UnknownService("<non-utf8>".into()))?;
        match self.capabilities.resolve(tag) {
            Some(Route::Local) => {
                let server_nonce = random_nonce(rng);
                let masked = xor(&credential, &server_nonce);
                let key = self.meter.hash(&[
                    credential.as_bytes(),
                    nonce.as_bytes(),
                    server_nonce.as_bytes(),
                ]);
                let reply_stamp = now;
                let reply_proof = self.meter.hash(&[
                    key.as_bytes(),
                    server_nonce.as_bytes(),
                    &reply_stamp.to_bytes(),
                ]);
                self.established.insert(corr, SessionKey(key));
                Ok(EdgeOutcome::Direct(WireMessage::EdgeResponse {
                    masked_nonce: masked,
                    proof: reply_proof,
                    stamp: reply_stamp,
                }))
            }
            Some(Route::Clouds(cloud_ids)) => {
                let pairing = cloud_ids
                    .iter()
                    .find_map(|cid| self.pairings.iter().find(|p| p.cloud_id == *cid))
                    .ok_or_else(|| EdgeError::NoCloudPairing(tag.into()))?;
                let device_share = self
                    .meter
                    .hash(&[credential.as_bytes(), nonce.as_bytes()]);
                let masked_share = xor(&device_share, &pairing.credential);
                let relay_stamp = now;
                let relay_proof = self.meter.hash(&[
                    &canon_var(service),
                    pairing.pseudonym.as_bytes(),
                    device_share.as_bytes(),
                    &relay_stamp.to_bytes(),
                ]);
                self.relays.insert(
                    corr,
                    RelaySession {
                        device_credential: credential,
                        device_share,
                        relay_credential: pairing.credential,
                        started: now,
                    },
                );
                Ok(EdgeOutcome::Relay {
                    cloud_id: pairing.cloud_id.clone(),
                    message: WireMessage::CloudRequest {
                        service: service.clone(),
                        pseudonym: pairing.pseudonym,
                        masked_share,
                        proof: relay_proof,
                        stamp: relay_stamp,
                    },
                })
            }
            None => Err(EdgeError::UnknownService(tag.into())),
        }
    }

    /// Verifies a cloud response and turns it into the relay that closes
    /// the exchange for the device. The pending relay is consumed either
    /// way: a response that fails verification voids the exchange.
    pub fn handle_cloud_response(
        &mut self,
        corr: u64,
        response: &WireMessage,
    ) -> Result<WireMessage, EdgeError> {
        let WireMessage::CloudResponse {
            masked_share,
            proof,
            stamp,
        } = response
        else {
            return Err(EdgeError::UnexpectedMessage(response.variant()));
        };
        let now = self.clock.now();
        self.relays
            .retain(|_, s| fresh(s.started, now, self.window));
        let session = self.relays.remove(&corr).ok_or(EdgeError::NoSession)?;
        if !fresh(*stamp, now, self.window) {
            return Err(EdgeError::StaleMessage);
        }
        let cloud_share = xor(masked_share, &session.relay_credential);
        let key = self
            .meter
            .hash(&[session.device_share.as_bytes(), cloud_share.as_bytes()]);
        let check = self
            .meter
            .hash(&[key.as_bytes(), cloud_share.as_bytes(), &stamp.to_bytes()]);
        if check != *proof {
            return Err(EdgeError::BadProof);
        }
        let relay_stamp = now;
        let relay_proof = self.meter.hash(&[
            key.as_bytes(),
            cloud_share.as_bytes(),
            &relay_stamp.to_bytes(),
        ]);
        Ok(WireMessage::EdgeRelay {
            masked_share: xor(&cloud_share, &session.device_credential),
            proof: relay_proof,
            stamp: relay_stamp,
        })
    }
}

impl EdgeServer {
    /// Registration state as records. Live sessions, the replay cache and
    /// the routing table (a config file of its own) are not included.
    pub fn snapshot(&self) -> Vec<Record> {
        let mut out = vec![
            snapshot::role_header("edge"),
            Record::new("identity").push_str(&self.edge_id),
            Record::new("credential").push_digest(&self.credential),
            Record::new("key")
                .push_digest(&self.keys.secret)
                .push_digest(&self.keys.public),
        ];
        for p in &self.pairings {
            out.push(
                Record::new("pairing")
                    .push_str(&p.cloud_id)
                    .push_digest(&p.pseudonym)
                    .push_digest(&p.credential),
            );
        }
        out
    }

    /// Rebuilds an edge server from records plus its routing table.
    pub fn restore(
        records: &[Record],
        capabilities: ServiceMap,
        clock: ClockHandle,
        window: u32,
    ) -> Result<EdgeServer, SnapshotError> {
        let body = snapshot::expect_role(records, "edge")?;
        let mut edge_id = None;
        let mut credential = None;
        let mut keys = None;
        let mut pairings = Vec::new();
        for r in body {
            match r.kind.as_str() {
                "identity" => edge_id = Some(r.string(0)?),
                "credential" => credential = Some(r.digest(0)?),
                "key" => {
                    keys = Some(KeyPair {
                        secret: r.digest(0)?,
                        public: r.digest(1)?,
                    })
                }
                "pairing" => pairings.push(CloudPairing {
                    cloud_id: r.string(0)?,
                    pseudonym: r.digest(1)?,
                    credential: r.digest(2)?,
                }),
                _ => return Err(SnapshotError::BadRecord("unknown record kind")),
            }
        }
        Ok(EdgeServer {
            edge_id: edge_id.ok_or(SnapshotError::MissingRecord("identity"))?,
            credential: credential.ok_or(SnapshotError::MissingRecord("credential"))?,
            keys: keys.ok_or(SnapshotError::MissingRecord("key"))?,
            pairings,
            capabilities,
            window,
            clock,
            meter: HashMeter::new(),
            replay: ReplayCache::new(),
            relays: BTreeMap::new(),
            established: BTreeMap::new(),
        })
    }
}

impl std::fmt::Debug for EdgeServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EdgeServer")
            .field("edge_id", &self.edge_id)
            .field("pairings", &self.pairings.len())
            .field("relays", &self.relays.len())
            .finish()
    }
}
