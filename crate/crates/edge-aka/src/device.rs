//! Device role: login, authentication start, session-key completion and
//! local password update.
//!
//! A device never performs public-key operations. Everything it sends is
//! built from hashing and XOR over material issued at registration: a pool
//! of pseudonyms `pid_x` and masked credentials `b_x = EPW xor a_x`, where
//! `a_x = h(pid_x || SE)` is shared with the edge server's derivation and
//! `EPW = h(UID || PW)` is recomputed from the typed password on every
//! authentication. Neither the password, `EPW`, nor any unmasked `a_x`
//! is stored.
//!
//! Login gates authentication behind the verifier `Q = h(UID || ID || PW)`
//! with a persistent failure counter; the lockout check runs before any
//! verification so a locked store rejects even the correct password.

use std::collections::BTreeMap;

use rand::Rng;

use crate::crypto::{
    fresh, hash, random_nonce, xor, ClockHandle, Digest, HashMeter, KeyPair, SessionKey,
    Timestamp,
};
use crate::snapshot::{self, Record, SnapshotError};
use crate::wire::{canon_var, WireMessage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DeviceError {
    #[error("store is locked after too many failed logins")]
    LockedOut,
    #[error("identity or password check failed")]
    BadCredentials,
    #[error("no credentials issued for that edge server")]
    UnknownEdge,
    #[error("pseudonym pool for that edge server is exhausted")]
    EmptyPseudonymPool,
    #[error("message timestamp outside the freshness window")]
    StaleMessage,
    #[error("response proof check failed")]
    BadProof,
    #[error("no pending authentication with that correlation id")]
    NoSession,
    #[error("expected an authentication response, got {0}")]
    UnexpectedMessage(&'static str),
    #[error("registration response is malformed")]
    BadRegistration,
}

/// How pseudonyms are drawn from the pool.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    /// Uniform random choice; pairs are reused across sessions.
    #[default]
    WithReplacement,
    /// Each pair is spent once; the pool can run out.
    SingleUse,
}

#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub lockout_limit: u32,
    pub freshness_window: u32,
    pub pool_mode: PoolMode,
}

impl Default for DeviceConfig {
    fn default() -> DeviceConfig {
        DeviceConfig {
            lockout_limit: crate::DEFAULT_LOCKOUT_LIMIT,
            freshness_window: crate::DEFAULT_FRESHNESS_WINDOW,
            pool_mode: PoolMode::WithReplacement,
        }
    }
}

/// Proof of a successful local login. Holds the typed identity and
/// password in memory so authentication can derive `EPW` on demand;
/// nothing here is ever written to the store.
#[derive(Clone)]
pub struct LoginToken {
    user_id: String,
    password: String,
}

impl std::fmt::Debug for LoginToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LoginToken(user={})", self.user_id)
    }
}

/// `h(UID || PW)`, the password-derived masking key. Computed on the
/// device at registration and re-derived at every authentication.
pub fn password_key(user_id: &str, password: &str) -> Digest {
    hash(&[&canon_var(user_id.as_bytes()), &canon_var(password.as_bytes())])
}

/// `h(UID || ID || PW)`, the stored login verifier.
pub fn login_verifier(user_id: &str, device_id: &str, password: &str) -> Digest {
    hash(&[
        &canon_var(user_id.as_bytes()),
        &canon_var(device_id.as_bytes()),
        &canon_var(password.as_bytes()),
    ])
}

#[derive(Debug, Clone)]
pub(crate) struct StoredPair {
    pub pseudonym: Digest,
    pub masked_credential: Digest,
    pub used: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct StoredBundle {
    pub edge_public_id: Digest,
    pub pairs: Vec<StoredPair>,
}

struct PendingAuth {
    credential: Digest,
    nonce: Digest,
    started: Timestamp,
}

/// A device's persistent store plus its in-flight authentication state.
pub struct Device {
    pub(crate) user_id: String,
    pub(crate) device_id: String,
    pub(crate) verifier: Digest,
    pub(crate) did: Digest,
    pub(crate) keys: KeyPair,
    pub(crate) bundles: Vec<StoredBundle>,
    pub(crate) failed_logins: u32,
    config: DeviceConfig,
    clock: ClockHandle,
    meter: HashMeter,
    sessions: BTreeMap<u64, PendingAuth>,
}

impl Device {
    /// Builds the device store from the registration response. The
    /// password is used to derive the verifier and then dropped.
    pub fn from_registration(
        user_id: &str,
        device_id: &str,
        password: &str,
        response: &WireMessage,
        clock: ClockHandle,
        config: DeviceConfig,
    ) -> Result<Device, DeviceError> {
        let WireMessage::RegisterDeviceResponse {
            did,
            secret_key,
            public_key,
            bundles,
        } = response
        else {
            return Err(DeviceError::BadRegistration);
        };
        if bundles.is_empty() || bundles.iter().any(|b| b.pairs.is_empty()) {
            return Err(DeviceError::BadRegistration);
        }
        Ok(Device {
            user_id: user_id.into(),
            device_id: device_id.into(),
            verifier: login_verifier(user_id, device_id, password),
            did: *did,
            keys: KeyPair {
                secret: *secret_key,
                public: *public_key,
            },
            bundles: bundles
                .iter()
                .map(|b| StoredBundle {
                    edge_public_id: b.edge_public_id,
                    pairs: b
                        .pairs
                        .iter()
                        .map(|(pid, masked)| StoredPair {
                            pseudonym: *pid,
                            masked_credential: *masked,
                            used: false,
                        })
                        .collect(),
                })
                .collect(),
            failed_logins: 0,
            config,
            clock,
            meter: HashMeter::new(),
            sessions: BTreeMap::new(),
        })
    }

    pub fn meter(&self) -> &HashMeter {
        &self.meter
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    /// Edge servers this device holds credentials for, by public id
    /// `h(PK_es)`.
    pub fn known_edges(&self) -> Vec<Digest> {
        self.bundles.iter().map(|b| b.edge_public_id).collect()
    }

    /// Unspent pairs left for an edge server; meaningful in single-use
    /// mode, constant otherwise.
    pub fn pool_remaining(&self, edge_public_id: &Digest) -> Option<usize> {
        let b = self
            .bundles
            .iter()
            .find(|b| b.edge_public_id == *edge_public_id)?;
        Some(match self.config.pool_mode {
            PoolMode::WithReplacement => b.pairs.len(),
            PoolMode::SingleUse => b.pairs.iter().filter(|p| !p.used).count(),
        })
    }

    pub fn failed_logins(&self) -> u32 {
        self.failed_logins
    }

    /// Checks the typed identity and password against the stored
    /// verifier. The lockout counter is consulted first, incremented on
    /// mismatch and cleared on success.
    pub fn login(&mut self, user_id: &str, password: &str) -> Result<LoginToken, DeviceError> {
        if self.failed_logins >= self.config.lockout_limit {
            return Err(DeviceError::LockedOut);
        }
        let candidate = self.meter.hash(&[
            &canon_var(user_id.as_bytes()),
            &canon_var(self.device_id.as_bytes()),
            &canon_var(password.as_bytes()),
        ]);
        if candidate != self.verifier {
            self.failed_logins += 1;
            return Err(DeviceError::BadCredentials);
        }
        self.failed_logins = 0;
        Ok(LoginToken {
            user_id: user_id.into(),
            password: password.into(),
        })
    }

    /// Starts an authentication toward the edge server identified by
    /// `h(PK_es)`: picks a pseudonym, unmasks its credential with the
    /// password-derived key, and builds the request message. The pending
    /// state is kept under `corr` until the matching response arrives.
    pub fn begin_auth<R: Rng + ?Sized>(
        &mut self,
        token: &LoginToken,
        edge_public_id: &Digest,
        service: &[u8],
        corr: u64,
        rng: &mut R,
    ) -> Result<WireMessage, DeviceError> {
        let now = self.clock.now();
        let window = self.config.freshness_window;
        self.sessions
            .retain(|_, s| fresh(s.started, now, window));
        let mode = self.config.pool_mode;
        let bundle = self
            .bundles
            .iter_mut()
            .find(|b| b.edge_public_id == *edge_public_id)
            .ok_or(DeviceError::UnknownEdge)?;
        let idx = match mode {
            PoolMode::WithReplacement => rng.random_range(0..bundle.pairs.len()),
            PoolMode::SingleUse => {
                let free: Vec<usize> = bundle
                    .pairs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| !p.used)
                    .map(|(i, _)| i)
                    .collect();
                if free.is_empty() {
                    return Err(DeviceError::EmptyPseudonymPool);
                }
                free[rng.random_range(0..free.len())]
            }
        };
        let pair = &mut bundle.pairs[idx];
        if mode == PoolMode::SingleUse {
            pair.used = true;
        }
        let pw_key = self.meter.hash(&[
            &canon_var(token.user_id.as_bytes()),
            &canon_var(token.password.as_bytes()),
        ]);
        let credential = xor(&pw_key, &pair.masked_credential);
        let nonce = random_nonce(rng);
        let masked_nonce = xor(&credential, &nonce);
        let proof = self.meter.hash(&[
            &canon_var(service),
            pair.pseudonym.as_bytes(),
            nonce.as_bytes(),
            &now.to_bytes(),
        ]);
        let pseudonym = pair.pseudonym;
        self.sessions.insert(
            corr,
            PendingAuth {
                credential,
                nonce,
                started: now,
            },
        );
        Ok(WireMessage::AuthRequest {
            service: service.to_vec(),
            pseudonym,
            masked_nonce,
            proof,
            stamp: now,
        })
    }

    /// Completes a direct exchange with the edge server. On success the
    /// pending state is consumed and both sides hold
    /// `sk = h(a || x1 || x2)`.
    pub fn complete_direct(
        &mut self,
        corr: u64,
        response: &WireMessage,
    ) -> Result<SessionKey, DeviceError> {
        let WireMessage::EdgeResponse {
            masked_nonce,
            proof,
            stamp,
        } = response
        else {
            return Err(DeviceError::UnexpectedMessage(response.variant()));
        };
        if !fresh(*stamp, self.clock.now(), self.config.freshness_window) {
            return Err(DeviceError::StaleMessage);
        }
        let session = self.sessions.get(&corr).ok_or(DeviceError::NoSession)?;
        let server_nonce = xor(masked_nonce, &session.credential);
        let key = self.meter.hash(&[
            session.credential.as_bytes(),
            session.nonce.as_bytes(),
            server_nonce.as_bytes(),
        ]);
        let check = self
            .meter
            .hash(&[key.as_bytes(), server_nonce.as_bytes(), &stamp.to_bytes()]);
        if check != *proof {
            return Err(DeviceError::BadProof);
        }
        self.sessions.remove(&corr);
        Ok(SessionKey(key))
    }

    /// Completes a relayed exchange: the edge server forwarded the cloud
    /// server's share, and the resulting key
    /// `sk = h(h(a || x1) || S_cloud)` is shared with the cloud server.
    pub fn complete_relayed(
        &mut self,
        corr: u64,
        response: &WireMessage,
    ) -> Result<SessionKey, DeviceError> {
        let WireMessage::EdgeRelay {
            masked_share,
            proof,
            stamp,
        } = response
        else {
            return Err(DeviceError::UnexpectedMessage(response.variant()));
        };
        if !fresh(*stamp, self.clock.now(), self.config.freshness_window) {
            return Err(DeviceError::StaleMessage);
        }
        let session = self.sessions.get(&corr).ok_or(DeviceError::NoSession)?;
        let device_share = self
            .meter
            .hash(&[session.credential.as_bytes(), session.nonce.as_bytes()]);
        let cloud_share = xor(masked_share, &session.credential);
        let key = self
            .meter
            .hash(&[device_share.as_bytes(), cloud_share.as_bytes()]);
        let check = self
            .meter
            .hash(&[key.as_bytes(), cloud_share.as_bytes(), &stamp.to_bytes()]);
        if check != *proof {
            return Err(DeviceError::BadProof);
        }
        self.sessions.remove(&corr);
        Ok(SessionKey(key))
    }

    /// Persistent store as records: verifier, identifiers, key pair,
    /// lockout counter, and every credential pair with its spent flag.
    /// Pending exchanges are not part of the store.
    pub fn snapshot(&self) -> Vec<Record> {
        let mut out = vec![
            snapshot::role_header("device"),
            Record::new("identity")
                .push_str(&self.user_id)
                .push_str(&self.device_id),
            Record::new("verifier").push_digest(&self.verifier),
            Record::new("did").push_digest(&self.did),
            Record::new("key")
                .push_digest(&self.keys.secret)
                .push_digest(&self.keys.public),
            Record::new("lockout").push_u32(self.failed_logins),
        ];
        for b in &self.bundles {
            out.push(Record::new("bundle").push_digest(&b.edge_public_id));
            for p in &b.pairs {
                out.push(
                    Record::new("pair")
                        .push_digest(&p.pseudonym)
                        .push_digest(&p.masked_credential)
                        .push_bool(p.used),
                );
            }
        }
        out
    }

    /// Rebuilds a device store from records. Runtime configuration is
    /// supplied by the caller; in-flight state starts empty.
    pub fn restore(
        records: &[Record],
        clock: ClockHandle,
        config: DeviceConfig,
    ) -> Result<Device, SnapshotError> {
        let body = snapshot::expect_role(records, "device")?;
        let mut identity = None;
        let mut verifier = None;
        let mut did = None;
        let mut keys = None;
        let mut failed_logins = 0;
        let mut bundles: Vec<StoredBundle> = Vec::new();
        for r in body {
            match r.kind.as_str() {
                "identity" => identity = Some((r.string(0)?, r.string(1)?)),
                "verifier" => verifier = Some(r.digest(0)?),
                "did" => did = Some(r.digest(0)?),
                "key" => {
                    keys = Some(KeyPair {
                        secret: r.digest(0)?,
                        public: r.digest(1)?,
                    })
                }
                "lockout" => failed_logins = r.u32(0)?,
                "bundle" => bundles.push(StoredBundle {
                    edge_public_id: r.digest(0)?,
                    pairs: Vec::new(),
                }),
                "pair" => bundles
                    .last_mut()
                    .ok_or(SnapshotError::BadRecord("pair before bundle"))?
                    .pairs
                    .push(StoredPair {
                        pseudonym: r.digest(0)?,
                        masked_credential: r.digest(1)?,
                        used: r.bool(2)?,
                    }),
                _ => return Err(SnapshotError::BadRecord("unknown record kind")),
            }
        }
        let (user_id, device_id) = identity.ok_or(SnapshotError::MissingRecord("identity"))?;
        Ok(Device {
            user_id,
            device_id,
            verifier: verifier.ok_or(SnapshotError::MissingRecord("verifier"))?,
            did: did.ok_or(SnapshotError::MissingRecord("did"))?,
            keys: keys.ok_or(SnapshotError::MissingRecord("key"))?,
            bundles,
            failed_logins,
            config,
            clock,
            meter: HashMeter::new(),
            sessions: BTreeMap::new(),
        })
    }

    /// Re-masks every stored credential under a new password and replaces
    /// the login verifier. The check of the old password is pure: a wrong
    /// password leaves the store byte-identical, lockout counter included.
    pub fn update_password(
        &mut self,
        user_id: &str,
        old_password: &str,
        new_password: &str,
    ) -> Result<(), DeviceError> {
        let candidate = login_verifier(user_id, &self.device_id, old_password);
        if candidate != self.verifier {
            return Err(DeviceError::BadCredentials);
        }
        let old_key = password_key(user_id, old_password);
        let new_key = password_key(user_id, new_password);
        let shift = xor(&old_key, &new_key);
        for bundle in &mut self.bundles {
            for pair in &mut bundle.pairs {
                pair.masked_credential = xor(&pair.masked_credential, &shift);
            }
        }
        self.verifier = login_verifier(user_id, &self.device_id, new_password);
        self.failed_logins = 0;
        Ok(())
    }
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device")
            .field("user_id", &self.user_id)
            .field("device_id", &self.device_id)
            .field("edges", &self.bundles.len())
            .field("failed_logins", &self.failed_logins)
            .finish()
    }
}
