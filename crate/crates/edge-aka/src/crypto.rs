//! Hash, XOR and time primitives shared by every protocol role.
//!
//! All credentials, pseudonyms, masks and session keys in this crate are
//! 256-bit [`Digest`] values produced by SHA-256 over canonically encoded
//! fields (see [`crate::wire`] for the encoding rules). Entities never call
//! the raw hash directly during a protocol run; they go through a
//! [`HashMeter`] so that per-entity hash counts can be reported exactly.

use std::fmt;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use sha2::{Digest as _, Sha256};

/// Length of a digest in bytes (256 bits).
pub const DIGEST_LEN: usize = 32;

/// A 256-bit value: hash output, credential, pseudonym, mask or key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    /// The all-zero digest, the identity element of [`xor`].
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses a 64-char hex string.
    pub fn from_hex(s: &str) -> Option<Digest> {
        let raw = hex::decode(s).ok()?;
        Digest::from_slice(&raw)
    }

    /// Returns `None` unless the slice is exactly 32 bytes.
    pub fn from_slice(raw: &[u8]) -> Option<Digest> {
        let bytes: [u8; DIGEST_LEN] = raw.try_into().ok()?;
        Some(Digest(bytes))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..8])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl std::ops::BitXor for Digest {
    type Output = Digest;

    fn bitxor(self, rhs: Digest) -> Digest {
        xor(&self, &rhs)
    }
}

/// Bytewise exclusive-or of two digests.
///
/// This is the masking operation of the protocol: `mask = value ^ key`
/// recovers `value` when applied again with the same key.
pub fn xor(a: &Digest, b: &Digest) -> Digest {
    let mut out = [0u8; DIGEST_LEN];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.0[i] ^ b.0[i];
    }
    Digest(out)
}

/// SHA-256 over the concatenation of already-canonicalized parts.
///
/// Callers are responsible for encoding each part canonically
/// ([`crate::wire::canon_var`] for variable-length fields; digests and
/// timestamps are their raw big-endian bytes). Not metered; protocol code
/// must use [`HashMeter::hash`] instead.
pub fn hash(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for part in parts {
        h.update(part);
    }
    Digest(h.finalize().into())
}

/// Counts hash invocations for one entity.
///
/// Cloning shares the counter, so a meter handle can be kept by a harness
/// while the entity owns another. Counts are exact: every protocol hash an
/// entity performs goes through its meter.
#[derive(Clone, Debug, Default)]
pub struct HashMeter {
    calls: Arc<AtomicU64>,
}

impl HashMeter {
    pub fn new() -> HashMeter {
        HashMeter::default()
    }

    /// Hashes `parts` and increments the call counter by one.
    pub fn hash(&self, parts: &[&[u8]]) -> Digest {
        self.calls.fetch_add(1, Ordering::Relaxed);
        hash(parts)
    }

    /// Total hash invocations since construction.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// A 32-bit timestamp in seconds. Encodes to exactly 4 bytes on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct Timestamp(pub u32);

impl Timestamp {
    pub fn to_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }

    pub fn from_bytes(raw: [u8; 4]) -> Timestamp {
        Timestamp(u32::from_be_bytes(raw))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Accepts `t` iff it is not in the future and at most `window_secs` old.
pub fn fresh(t: Timestamp, now: Timestamp, window_secs: u32) -> bool {
    let age = i64::from(now.0) - i64::from(t.0);
    0 <= age && age <= i64::from(window_secs)
}

/// A shared simulated clock. All entities observing the same `Clock` (via
/// [`ClockHandle`]) see the same instant, plus any per-entity skew.
#[derive(Debug, Default)]
pub struct Clock {
    secs: AtomicI64,
}

impl Clock {
    pub fn starting_at(secs: u32) -> Arc<Clock> {
        Arc::new(Clock {
            secs: AtomicI64::new(i64::from(secs)),
        })
    }

    /// A clock initialized from system time; still advanced manually.
    pub fn from_system_time() -> Arc<Clock> {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Clock::starting_at(now as u32)
    }

    pub fn advance(&self, secs: u32) {
        self.secs.fetch_add(i64::from(secs), Ordering::Relaxed);
    }

    pub fn set(&self, secs: u32) {
        self.secs.store(i64::from(secs), Ordering::Relaxed);
    }

    fn read(&self) -> i64 {
        self.secs.load(Ordering::Relaxed)
    }
}

/// Per-entity view of a [`Clock`], with optional skew in seconds.
#[derive(Clone, Debug)]
pub struct ClockHandle {
    clock: Arc<Clock>,
    skew: i64,
}

impl ClockHandle {
    pub fn new(clock: Arc<Clock>) -> ClockHandle {
        ClockHandle { clock, skew: 0 }
    }

    pub fn with_skew(clock: Arc<Clock>, skew: i64) -> ClockHandle {
        ClockHandle { clock, skew }
    }

    /// Current time, truncated to 32-bit seconds.
    pub fn now(&self) -> Timestamp {
        let t = self.clock.read() + self.skew;
        Timestamp(t.clamp(0, i64::from(u32::MAX)) as u32)
    }
}

/// A 32-byte random value, interchangeable with [`Digest`] for masking.
pub type Nonce = Digest;

/// Draws 32 uniformly random bytes from `rng`.
pub fn random_nonce<R: RngCore + ?Sized>(rng: &mut R) -> Nonce {
    let mut raw = [0u8; DIGEST_LEN];
    rng.fill_bytes(&mut raw);
    Digest(raw)
}

/// A derived session key. Debug/Display never reveal the key material;
/// use [`SessionKey::fingerprint`] to compare keys across entities.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SessionKey(pub Digest);

impl SessionKey {
    /// Hash of the key, safe to print and compare.
    pub fn fingerprint(&self) -> Digest {
        hash(&[self.0.as_bytes()])
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey(fp={}..)", &self.fingerprint().to_hex()[..16])
    }
}

/// Replay guard: remembers the proof digests of accepted requests.
///
/// A replay is the same bytes again, so the proof — which binds every
/// other field — identifies it exactly; keying on the proof also lets
/// distinct legitimate requests share a pseudonym and a second without
/// colliding (an edge server's pairing pseudonym is static, and two
/// relays through it can land on the same stamp). Any *modified* copy
/// fails proof verification instead. Entries are inserted only after a
/// request verifies, so a rejected forgery never blocks the honest
/// message it copied, and each entry carries the message stamp so
/// pruning can drop entries older than the freshness window; anything
/// older is already rejected by the freshness check.
#[derive(Debug, Default)]
pub struct ReplayCache {
    seen: std::collections::BTreeSet<(Timestamp, Digest)>,
}

impl ReplayCache {
    pub fn new() -> ReplayCache {
        ReplayCache::default()
    }

    pub fn contains(&self, proof: &Digest, stamp: Timestamp) -> bool {
        self.seen.contains(&(stamp, *proof))
    }

    pub fn insert(&mut self, proof: &Digest, stamp: Timestamp) {
        self.seen.insert((stamp, *proof));
    }

    pub fn prune(&mut self, now: Timestamp, window_secs: u32) {
        let cutoff = now.0.saturating_sub(window_secs);
        self.seen = self.seen.split_off(&(Timestamp(cutoff), Digest::ZERO));
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Long-term key pair issued at registration. Public keys enter the
/// protocol only through their hash, so 32 random bytes with a derived
/// public half stand in for a full asymmetric pair.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct KeyPair {
    pub secret: Digest,
    pub public: Digest,
}

impl KeyPair {
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> KeyPair {
        let secret = random_nonce(rng);
        let public = hash(&[b"pub", secret.as_bytes()]);
        KeyPair { secret, public }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair(pub={}..)", &self.public.to_hex()[..16])
    }
}
