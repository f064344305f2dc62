//! Cloud server role: answers relayed requests from edge servers and
//! ends up sharing a session key with a device it never identifies.
//!
//! The relay carries the edge server's pseudonym toward this cloud
//! server; `A = h(pid || SC)` unmasks the device share `S_dev` that the
//! edge server blinded into the request. The response contributes the
//! cloud share `S_cloud = h(A || x3)` and the key is
//! `sk = h(S_dev || S_cloud)`, retained here against the device share.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::caps::{service_tag, Route, ServiceMap};
use crate::crypto::{
    fresh, random_nonce, xor, ClockHandle, Digest, HashMeter, KeyPair, ReplayCache, SessionKey,
};
use crate::snapshot::{self, Record, SnapshotError};
use crate::wire::{canon_var, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CloudError {
    #[error("message timestamp outside the freshness window")]
    StaleMessage,
    #[error("request was already accepted inside the window")]
    ReplayedMessage,
    #[error("request proof check failed")]
    BadProof,
    #[error("service tag `{0}` is not served here")]
    UnknownService(String),
    #[error("expected a relayed request, got {0}")]
    UnexpectedMessage(&'static str),
    #[error("registration response is malformed")]
    BadRegistration,
}

struct CloudSession {
    device_share: Digest,
    key: SessionKey,
}

/// A cloud server's registration state and established sessions.
pub struct CloudServer {
    pub(crate) cloud_id: String,
    pub(crate) credential: Digest,
    pub(crate) keys: KeyPair,
    services: ServiceMap,
    window: u32,
    clock: ClockHandle,
    meter: HashMeter,
    replay: ReplayCache,
    established: BTreeMap<u64, CloudSession>,
}

impl CloudServer {
    pub fn from_registration(
        cloud_id: &str,
        response: &WireMessage,
        services: ServiceMap,
        clock: ClockHandle,
        window: u32,
    ) -> Result<CloudServer, CloudError> {
        let WireMessage::RegisterCsResponse {
            credential,
            secret_key,
            public_key,
        } = response
        else {
            return Err(CloudError::BadRegistration);
        };
        Ok(CloudServer {
            cloud_id: cloud_id.into(),
            credential: *credential,
            keys: KeyPair {
                secret: *secret_key,
                public: *public_key,
            },
            services,
            window,
            clock,
            meter: HashMeter::new(),
            replay: ReplayCache::new(),
            established: BTreeMap::new(),
        })
    }

    pub fn cloud_id(&self) -> &str {
        &self.cloud_id
    }

    pub fn meter(&self) -> &HashMeter {
        &self.meter
    }

    pub fn services(&self) -> &ServiceMap {
        &self.services
    }

    /// Session key established for `corr`, removed from the table.
    pub fn take_session_key(&mut self, corr: u64) -> Option<SessionKey> {
        self.established.remove(&corr).map(|s| s.key)
    }

    /// Session key retained for a device share, as the exchange leaves it.
    pub fn session_key_for_share(&self, device_share: &Digest) -> Option<SessionKey> {
        self.established
            .values()
            .find(|s| s.device_share == *device_share)
            .map(|s| s.key)
    }

    /// Verifies a relayed request and answers with this server's share
    /// of the session key.
    pub fn handle_relay<R: RngCore + ?Sized>(
        &mut self,
        corr: u64,
        request: &WireMessage,
        rng: &mut R,
    ) -> Result<WireMessage, CloudError> {
        let WireMessage::CloudRequest {
            service,
            pseudonym,
            masked_share,
            proof,
            stamp,
        } = request
        else {
            return Err(CloudError::UnexpectedMessage(request.variant()));
        };
        let now = self.clock.now();
        if !fresh(*stamp, now, self.window) {
            return Err(CloudError::StaleMessage);
        }
        self.replay.prune(now, self.window);
        if self.replay.contains(proof, *stamp) {
            return Err(CloudError::ReplayedMessage);
        }
        let credential = self
            .meter
            .hash(&[pseudonym.as_bytes(), self.credential.as_bytes()]);
        let device_share = xor(masked_share, &credential);
        let check = self.meter.hash(&[
            &canon_var(service),
            pseudonym.as_bytes(),
            device_share.as_bytes(),
            &stamp.to_bytes(),
        ]);
        if check != *proof {
            return Err(CloudError::BadProof);
        }
        self.replay.insert(proof, *stamp);
        let tag = service_tag(service)
            .ok_or_else(|| CloudError::UnknownService("<non-utf8>".into()))?;
        if self.services.resolve(tag) != Some(&Route::Local) {
            return Err(CloudError::UnknownService(tag.into()));
        }
        let nonce = random_nonce(rng);
        let cloud_share = self
            .meter
            .hash(&[credential.as_bytes(), nonce.as_bytes()]);
        let masked = xor(&cloud_share, &credential);
        let key = self
            .meter
            .hash(&[device_share.as_bytes(), cloud_share.as_bytes()]);
        let reply_stamp = now;
        let reply_proof = self.meter.hash(&[
            key.as_bytes(),
            cloud_share.as_bytes(),
            &reply_stamp.to_bytes(),
        ]);
        self.established.insert(
            corr,
            CloudSession {
                device_share,
                key: SessionKey(key),
            },
        );
        Ok(WireMessage::CloudResponse {
            masked_share: masked,
            proof: reply_proof,
            stamp: reply_stamp,
        })
    }
}

impl CloudServer {
    /// Registration state as records. Established session keys, the
    /// replay cache and the service list are not included.
    pub fn snapshot(&self) -> Vec<Record> {
        vec![
            snapshot::role_header("cloud"),
            Record::new("identity").push_str(&self.cloud_id),
            Record::new("credential").push_digest(&self.credential),
            Record::new("key")
                .push_digest(&self.keys.secret)
                .push_digest(&self.keys.public),
        ]
    }

    /// Rebuilds a cloud server from records plus its service list.
    pub fn restore(
        records: &[Record],
        services: ServiceMap,
        clock: ClockHandle,
        window: u32,
    ) -> Result<CloudServer, SnapshotError> {
        let body = snapshot::expect_role(records, "cloud")?;
        let mut cloud_id = None;
        let mut credential = None;
        let mut keys = None;
        for r in body {
            match r.kind.as_str() {
                "identity" => cloud_id = Some(r.string(0)?),
                "credential" => credential = Some(r.digest(0)?),
                "key" => {
                    keys = Some(KeyPair {
                        secret: r.digest(0)?,
                        public: r.digest(1)?,
                    })
                }
                _ => return Err(SnapshotError::BadRecord("unknown record kind")),
            }
        }
        Ok(CloudServer {
            cloud_id: cloud_id.ok_or(SnapshotError::MissingRecord("identity"))?,
            credential: credential.ok_or(SnapshotError::MissingRecord("credential"))?,
            keys: keys.ok_or(SnapshotError::MissingRecord("key"))?,
            services,
            window,
            clock,
            meter: HashMeter::new(),
            replay: ReplayCache::new(),
            established: BTreeMap::new(),
        })
    }
}

impl std::fmt::Debug for CloudServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CloudServer")
            .field("cloud_id", &self.cloud_id)
            .field("sessions", &self.established.len())
            .finish()
    }
}
