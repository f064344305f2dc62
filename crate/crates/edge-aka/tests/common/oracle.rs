//! Independent straight-line reference for every derived value.
//!
//! Each function below recomputes one protocol formula directly with
//! SHA-256 over the canonical encodings, sharing no code with the
//! library. Tests compare library outputs against these byte for byte;
//! a mismatch means the main implementation (or this reference) has
//! drifted from the agreed derivations.
//!
//! Canonical encodings:
//! - digests: raw 32 bytes
//! - timestamps: 4-byte big-endian seconds
//! - variable-length fields (identities, service requests): 4-byte
//!   big-endian length prefix, then the bytes

#![allow(dead_code)] // each test binary uses the slice it needs

use sha2::{Digest as _, Sha256};

pub type B32 = [u8; 32];

pub fn sha(parts: &[&[u8]]) -> B32 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Length-prefixed encoding of a variable-length field.
pub fn var(data: &[u8]) -> Vec<u8> {
    let mut out = (data.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(data);
    out
}

/// Canonical timestamp bytes.
pub fn stamp(t: u32) -> [u8; 4] {
    t.to_be_bytes()
}

pub fn xor32(a: &B32, b: &B32) -> B32 {
    let mut out = [0u8; 32];
    for i in 0..32 {
        out[i] = a[i] ^ b[i];
    }
    out
}

// --- registration-time derivations -------------------------------------

/// Long-term credential of a registered server: h(s || h(PK)).
pub fn server_credential(s: &B32, public_key: &B32) -> B32 {
    sha(&[s, &sha(&[public_key])])
}

/// Pseudonym an edge server uses toward one cloud server:
/// h(EID || h(PK_cloud)).
pub fn edge_pairing_pseudonym(edge_id: &str, cloud_public_key: &B32) -> B32 {
    sha(&[&var(edge_id.as_bytes()), &sha(&[cloud_public_key])])
}

/// Relay credential for that pairing: h(pid || SC).
pub fn edge_pairing_credential(pairing_pseudonym: &B32, cloud_credential: &B32) -> B32 {
    sha(&[pairing_pseudonym, cloud_credential])
}

/// Device's secret identity: h(UID || ID || s).
pub fn device_secret_id(user_id: &str, device_id: &str, s: &B32) -> B32 {
    sha(&[&var(user_id.as_bytes()), &var(device_id.as_bytes()), s])
}

/// One pseudonym of a device's pool toward one edge server:
/// h(DID || h(PK_edge) || T).
pub fn device_pseudonym(did: &B32, edge_public_key: &B32, t: u32) -> B32 {
    sha(&[did, &sha(&[edge_public_key]), &stamp(t)])
}

/// Edge-side credential bound to one pseudonym: h(pid || SE). The same
/// formula yields the device's unmasked `a` and the edge's recomputed
/// check value.
pub fn pair_credential(pseudonym: &B32, edge_credential: &B32) -> B32 {
    sha(&[pseudonym, edge_credential])
}

/// Password-derived masking key: h(UID || PW).
pub fn password_mask_key(user_id: &str, password: &str) -> B32 {
    sha(&[&var(user_id.as_bytes()), &var(password.as_bytes())])
}

/// Stored mask of a credential: a XOR h(UID || PW).
pub fn masked_credential(credential: &B32, mask_key: &B32) -> B32 {
    xor32(credential, mask_key)
}

/// Local login verifier: h(UID || ID || PW).
pub fn login_verifier(user_id: &str, device_id: &str, password: &str) -> B32 {
    sha(&[
        &var(user_id.as_bytes()),
        &var(device_id.as_bytes()),
        &var(password.as_bytes()),
    ])
}

// --- per-exchange derivations -------------------------------------------

/// Request proof sent with the first and the relayed message:
/// h(SerReq || pid || hidden-value || T).
pub fn request_proof(service: &[u8], pseudonym: &B32, hidden: &B32, t: u32) -> B32 {
    sha(&[&var(service), pseudonym, hidden, &stamp(t)])
}

/// Session key of the two-party exchange: h(a || x1 || x2).
pub fn direct_session_key(credential: &B32, x1: &B32, x2: &B32) -> B32 {
    sha(&[credential, x1, x2])
}

/// Share contributed by one leg of the relayed exchange: h(cred || x).
pub fn relay_share(credential: &B32, nonce: &B32) -> B32 {
    sha(&[credential, nonce])
}

/// Session key of the relayed exchange: h(S_device || S_cloud).
pub fn relayed_session_key(device_share: &B32, cloud_share: &B32) -> B32 {
    sha(&[device_share, cloud_share])
}

/// Confirmation proof used by every responding party:
/// h(sk || share || T).
pub fn confirm_proof(session_key: &B32, share: &B32, t: u32) -> B32 {
    sha(&[session_key, share, &stamp(t)])
}
