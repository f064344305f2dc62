//! Canonical field encoding and the wire format for every protocol message.
//!
//! The same canonical encoding is used for hash inputs and for message
//! serialization, so concatenated hash inputs are never ambiguous:
//!
//! * digests: raw 32 bytes
//! * timestamps: 4 bytes, big-endian seconds
//! * variable-length fields (identities, service requests): 4-byte
//!   big-endian length prefix followed by the raw bytes
//!
//! On the wire a message is a 1-byte variant tag followed by its fields in
//! protocol order, with the service request always last so size accounting
//! can exclude it. The variant tag and all length prefixes are transport
//! framing and are excluded from [`WireMessage::accounted_bits`], which
//! counts only the protocol fields themselves.

use crate::crypto::{Digest, Timestamp, DIGEST_LEN};

/// Decoding failure: the bytes are not a well-formed message. Receivers
/// treat this as tampering or corruption and drop the message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MalformedMessage {
    #[error("message is empty")]
    Empty,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("message truncated")]
    Truncated,
    #[error("trailing bytes after message body")]
    TrailingBytes,
    #[error("length prefix exceeds message size")]
    BadLength,
    #[error("identity field is not valid UTF-8")]
    BadIdentity,
}

/// Appends the canonical encoding of a variable-length field.
pub fn put_var(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

/// Canonical encoding of a variable-length field (length prefix + bytes),
/// as fed to the hash when a field is not fixed-width.
pub fn canon_var(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + bytes.len());
    put_var(&mut out, bytes);
    out
}

/// Pseudonym/credential pair issued for one peer.
pub type CredentialPair = (Digest, Digest);

/// Per-edge-server material issued to a device at registration:
/// the server's public identifier and the positional (pseudonym, masked
/// credential) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeBundle {
    pub edge_public_id: Digest,
    pub pairs: Vec<CredentialPair>,
}

/// Pseudonym and credential an edge server holds toward one cloud server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudPairing {
    pub cloud_id: String,
    pub pseudonym: Digest,
    pub credential: Digest,
}

/// Every message either side of the protocol can emit.
///
/// The five authentication messages carry fixed-width digests and a
/// timestamp; the registration messages are exchanged over the secure
/// registration channel and are not size-accounted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    /// Device -> edge server: service request, chosen pseudonym, masked
    /// nonce and request proof.
    AuthRequest {
        service: Vec<u8>,
        pseudonym: Digest,
        masked_nonce: Digest,
        proof: Digest,
        stamp: Timestamp,
    },
    /// Edge server -> device: masked server nonce and response proof.
    EdgeResponse {
        masked_nonce: Digest,
        proof: Digest,
        stamp: Timestamp,
    },
    /// Edge server -> cloud server: relayed service request under the
    /// edge server's own pseudonym, masked device share and proof.
    CloudRequest {
        service: Vec<u8>,
        pseudonym: Digest,
        masked_share: Digest,
        proof: Digest,
        stamp: Timestamp,
    },
    /// Cloud server -> edge server: masked cloud share and proof.
    CloudResponse {
        masked_share: Digest,
        proof: Digest,
        stamp: Timestamp,
    },
    /// Edge server -> device: relayed cloud share and proof.
    EdgeRelay {
        masked_share: Digest,
        proof: Digest,
        stamp: Timestamp,
    },
    RegisterCsRequest {
        cloud_id: String,
    },
    RegisterCsResponse {
        credential: Digest,
        secret_key: Digest,
        public_key: Digest,
    },
    RegisterEsRequest {
        edge_id: String,
        clouds: Vec<String>,
    },
    RegisterEsResponse {
        credential: Digest,
        secret_key: Digest,
        public_key: Digest,
        pairings: Vec<CloudPairing>,
    },
    RegisterDeviceRequest {
        user_id: String,
        device_id: String,
        pw_key: Digest,
        edges: Vec<String>,
        pseudonym_count: u32,
    },
    RegisterDeviceResponse {
        did: Digest,
        secret_key: Digest,
        public_key: Digest,
        bundles: Vec<EdgeBundle>,
    },
}

const TAG_AUTH_REQUEST: u8 = 0x01;
const TAG_EDGE_RESPONSE: u8 = 0x02;
const TAG_CLOUD_REQUEST: u8 = 0x03;
const TAG_CLOUD_RESPONSE: u8 = 0x04;
const TAG_EDGE_RELAY: u8 = 0x05;
const TAG_REG_CS_REQ: u8 = 0x10;
const TAG_REG_CS_RESP: u8 = 0x11;
const TAG_REG_ES_REQ: u8 = 0x12;
const TAG_REG_ES_RESP: u8 = 0x13;
const TAG_REG_DEV_REQ: u8 = 0x14;
const TAG_REG_DEV_RESP: u8 = 0x15;

impl WireMessage {
    /// Short name of the message variant, used in transcripts and reports.
    pub fn variant(&self) -> &'static str {
        match self {
            WireMessage::AuthRequest { .. } => "Msg1",
            WireMessage::EdgeResponse { .. } => "Msg2",
            WireMessage::CloudRequest { .. } => "Msg3",
            WireMessage::CloudResponse { .. } => "Msg4",
            WireMessage::EdgeRelay { .. } => "Msg5",
            WireMessage::RegisterCsRequest { .. } => "RegCsReq",
            WireMessage::RegisterCsResponse { .. } => "RegCsResp",
            WireMessage::RegisterEsRequest { .. } => "RegEsReq",
            WireMessage::RegisterEsResponse { .. } => "RegEsResp",
            WireMessage::RegisterDeviceRequest { .. } => "RegDevReq",
            WireMessage::RegisterDeviceResponse { .. } => "RegDevResp",
        }
    }

    /// Deterministic byte encoding: variant tag, then the fields in
    /// protocol order, with the service request last.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128);
        match self {
            WireMessage::AuthRequest {
                service,
                pseudonym,
                masked_nonce,
                proof,
                stamp,
            } => {
                out.push(TAG_AUTH_REQUEST);
                out.extend_from_slice(pseudonym.as_bytes());
                out.extend_from_slice(masked_nonce.as_bytes());
                out.extend_from_slice(proof.as_bytes());
                out.extend_from_slice(&stamp.to_bytes());
                put_var(&mut out, service);
            }
            WireMessage::EdgeResponse {
                masked_nonce,
                proof,
                stamp,
            } => {
                out.push(TAG_EDGE_RESPONSE);
                out.extend_from_slice(masked_nonce.as_bytes());
                out.extend_from_slice(proof.as_bytes());
                out.extend_from_slice(&stamp.to_bytes());
            }
            WireMessage::CloudRequest {
                service,
                pseudonym,
                masked_share,
                proof,
                stamp,
            } => {
                out.push(TAG_CLOUD_REQUEST);
                out.extend_from_slice(pseudonym.as_bytes());
                out.extend_from_slice(masked_share.as_bytes());
                out.extend_from_slice(proof.as_bytes());
                out.extend_from_slice(&stamp.to_bytes());
                put_var(&mut out, service);
            }
            WireMessage::CloudResponse {
                masked_share,
                proof,
                stamp,
            } => {
                out.push(TAG_CLOUD_RESPONSE);
                out.extend_from_slice(masked_share.as_bytes());
                out.extend_from_slice(proof.as_bytes());
                out.extend_from_slice(&stamp.to_bytes());
            }
            WireMessage::EdgeRelay {
                masked_share,
                proof,
                stamp,
            } => {
                out.push(TAG_EDGE_RELAY);
                out.extend_from_slice(masked_share.as_bytes());
                out.extend_from_slice(proof.as_bytes());
                out.extend_from_slice(&stamp.to_bytes());
            }
            WireMessage::RegisterCsRequest { cloud_id } => {
                out.push(TAG_REG_CS_REQ);
                put_var(&mut out, cloud_id.as_bytes());
            }
            WireMessage::RegisterCsResponse {
                credential,
                secret_key,
                public_key,
            } => {
                out.push(TAG_REG_CS_RESP);
                out.extend_from_slice(credential.as_bytes());
                out.extend_from_slice(secret_key.as_bytes());
                out.extend_from_slice(public_key.as_bytes());
            }
            WireMessage::RegisterEsRequest { edge_id, clouds } => {
                out.push(TAG_REG_ES_REQ);
                put_var(&mut out, edge_id.as_bytes());
                out.extend_from_slice(&(clouds.len() as u32).to_be_bytes());
                for cid in clouds {
                    put_var(&mut out, cid.as_bytes());
                }
            }
            WireMessage::RegisterEsResponse {
                credential,
                secret_key,
                public_key,
                pairings,
            } => {
                out.push(TAG_REG_ES_RESP);
                out.extend_from_slice(credential.as_bytes());
                out.extend_from_slice(secret_key.as_bytes());
                out.extend_from_slice(public_key.as_bytes());
                out.extend_from_slice(&(pairings.len() as u32).to_be_bytes());
                for p in pairings {
                    put_var(&mut out, p.cloud_id.as_bytes());
                    out.extend_from_slice(p.pseudonym.as_bytes());
                    out.extend_from_slice(p.credential.as_bytes());
                }
            }
            WireMessage::RegisterDeviceRequest {
                user_id,
                device_id,
                pw_key,
                edges,
                pseudonym_count,
            } => {
                out.push(TAG_REG_DEV_REQ);
                put_var(&mut out, user_id.as_bytes());
                put_var(&mut out, device_id.as_bytes());
                out.extend_from_slice(pw_key.as_bytes());
                out.extend_from_slice(&(edges.len() as u32).to_be_bytes());
                for eid in edges {
                    put_var(&mut out, eid.as_bytes());
                }
                out.extend_from_slice(&pseudonym_count.to_be_bytes());
            }
            WireMessage::RegisterDeviceResponse {
                did,
                secret_key,
                public_key,
                bundles,
            } => {
                out.push(TAG_REG_DEV_RESP);
                out.extend_from_slice(did.as_bytes());
                out.extend_from_slice(secret_key.as_bytes());
                out.extend_from_slice(public_key.as_bytes());
                out.extend_from_slice(&(bundles.len() as u32).to_be_bytes());
                for b in bundles {
                    out.extend_from_slice(b.edge_public_id.as_bytes());
                    out.extend_from_slice(&(b.pairs.len() as u32).to_be_bytes());
                    for (pid, masked) in &b.pairs {
                        out.extend_from_slice(pid.as_bytes());
                        out.extend_from_slice(masked.as_bytes());
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`WireMessage::encode`]; strict, with no bytes left over.
    pub fn decode(bytes: &[u8]) -> Result<WireMessage, MalformedMessage> {
        let mut r = Reader::new(bytes);
        let tag = r.byte().map_err(|_| MalformedMessage::Empty)?;
        let msg = match tag {
            TAG_AUTH_REQUEST => {
                let pseudonym = r.digest()?;
                let masked_nonce = r.digest()?;
                let proof = r.digest()?;
                let stamp = r.stamp()?;
                let service = r.var()?.to_vec();
                WireMessage::AuthRequest {
                    service,
                    pseudonym,
                    masked_nonce,
                    proof,
                    stamp,
                }
            }
            TAG_EDGE_RESPONSE => WireMessage::EdgeResponse {
                masked_nonce: r.digest()?,
                proof: r.digest()?,
                stamp: r.stamp()?,
            },
            TAG_CLOUD_REQUEST => {
                let pseudonym = r.digest()?;
                let masked_share = r.digest()?;
                let proof = r.digest()?;
                let stamp = r.stamp()?;
                let service = r.var()?.to_vec();
                WireMessage::CloudRequest {
                    service,
                    pseudonym,
                    masked_share,
                    proof,
                    stamp,
                }
            }
            TAG_CLOUD_RESPONSE => WireMessage::CloudResponse {
                masked_share: r.digest()?,
                proof: r.digest()?,
                stamp: r.stamp()?,
            },
            TAG_EDGE_RELAY => WireMessage::EdgeRelay {
                masked_share: r.digest()?,
                proof: r.digest()?,
                stamp: r.stamp()?,
            },
            TAG_REG_CS_REQ => WireMessage::RegisterCsRequest {
                cloud_id: r.string()?,
            },
            TAG_REG_CS_RESP => WireMessage::RegisterCsResponse {
                credential: r.digest()?,
                secret_key: r.digest()?,
                public_key: r.digest()?,
            },
            TAG_REG_ES_REQ => {
                let edge_id = r.string()?;
                let n = r.count()?;
                let mut clouds = Vec::with_capacity(n);
                for _ in 0..n {
                    clouds.push(r.string()?);
                }
                WireMessage::RegisterEsRequest { edge_id, clouds }
            }
            TAG_REG_ES_RESP => {
                let credential = r.digest()?;
                let secret_key = r.digest()?;
                let public_key = r.digest()?;
                let n = r.count()?;
                let mut pairings = Vec::with_capacity(n);
                for _ in 0..n {
                    pairings.push(CloudPairing {
                        cloud_id: r.string()?,
                        pseudonym: r.digest()?,
                        credential: r.digest()?,
                    });
                }
                WireMessage::RegisterEsResponse {
                    credential,
                    secret_key,
                    public_key,
                    pairings,
                }
            }
            TAG_REG_DEV_REQ => {
                let user_id = r.string()?;
                let device_id = r.string()?;
                let pw_key = r.digest()?;
                let n = r.count()?;
                let mut edges = Vec::with_capacity(n);
                for _ in 0..n {
                    edges.push(r.string()?);
                }
                let pseudonym_count = r.u32()?;
                WireMessage::RegisterDeviceRequest {
                    user_id,
                    device_id,
                    pw_key,
                    edges,
                    pseudonym_count,
                }
            }
            TAG_REG_DEV_RESP => {
                let did = r.digest()?;
                let secret_key = r.digest()?;
                let public_key = r.digest()?;
                let n = r.count()?;
                let mut bundles = Vec::with_capacity(n);
                for _ in 0..n {
                    let edge_public_id = r.digest()?;
                    let pairs_n = r.count()?;
                    let mut pairs = Vec::with_capacity(pairs_n);
                    for _ in 0..pairs_n {
                        pairs.push((r.digest()?, r.digest()?));
                    }
                    bundles.push(EdgeBundle {
                        edge_public_id,
                        pairs,
                    });
                }
                WireMessage::RegisterDeviceResponse {
                    did,
                    secret_key,
                    public_key,
                    bundles,
                }
            }
            other => return Err(MalformedMessage::UnknownTag(other)),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Protocol payload size in bits, excluding the service request, the
    /// variant tag and all length prefixes. This matches how message sizes
    /// are compared across schemes: digests count 256 bits, timestamps 32,
    /// identities 8 per byte.
    pub fn accounted_bits(&self) -> u64 {
        const D: u64 = 8 * DIGEST_LEN as u64;
        const T: u64 = 32;
        let s = |v: &str| 8 * v.len() as u64;
        match self {
            WireMessage::AuthRequest { .. } => 3 * D + T,
            WireMessage::EdgeResponse { .. } => 2 * D + T,
            WireMessage::CloudRequest { .. } => 3 * D + T,
            WireMessage::CloudResponse { .. } => 2 * D + T,
            WireMessage::EdgeRelay { .. } => 2 * D + T,
            WireMessage::RegisterCsRequest { cloud_id } => s(cloud_id),
            WireMessage::RegisterCsResponse { .. } => 3 * D,
            WireMessage::RegisterEsRequest { edge_id, clouds } => {
                s(edge_id) + clouds.iter().map(|c| s(c)).sum::<u64>()
            }
            WireMessage::RegisterEsResponse { pairings, .. } => {
                3 * D
                    + pairings
                        .iter()
                        .map(|p| s(&p.cloud_id) + 2 * D)
                        .sum::<u64>()
            }
            WireMessage::RegisterDeviceRequest {
                user_id,
                device_id,
                edges,
                ..
            } => {
                s(user_id)
                    + s(device_id)
                    + D
                    + edges.iter().map(|e| s(e)).sum::<u64>()
                    + 32
            }
            WireMessage::RegisterDeviceResponse { bundles, .. } => {
                3 * D
                    + bundles
                        .iter()
                        .map(|b| D + 2 * D * b.pairs.len() as u64)
                        .sum::<u64>()
            }
        }
    }
}

/// Byte ranges of every part of an encoded authentication message, in
/// encoding order and covering it exactly: the variant tag, each protocol
/// field, and the service request (prefix included) where present.
/// Registration messages never cross the open channel, so they have no
/// ranges. Used to aim targeted corruption at specific fields.
pub fn field_ranges(msg: &WireMessage) -> Vec<(&'static str, std::ops::Range<usize>)> {
    const D: usize = DIGEST_LEN;
    match msg {
        WireMessage::AuthRequest { service, .. } | WireMessage::CloudRequest { service, .. } => {
            let share = matches!(msg, WireMessage::CloudRequest { .. });
            vec![
                ("tag", 0..1),
                ("pseudonym", 1..1 + D),
                (
                    if share { "masked_share" } else { "masked_nonce" },
                    1 + D..1 + 2 * D,
                ),
                ("proof", 1 + 2 * D..1 + 3 * D),
                ("stamp", 1 + 3 * D..5 + 3 * D),
                ("service", 5 + 3 * D..9 + 3 * D + service.len()),
            ]
        }
        WireMessage::EdgeResponse { .. } => vec![
            ("tag", 0..1),
            ("masked_nonce", 1..1 + D),
            ("proof", 1 + D..1 + 2 * D),
            ("stamp", 1 + 2 * D..5 + 2 * D),
        ],
        WireMessage::CloudResponse { .. } | WireMessage::EdgeRelay { .. } => vec![
            ("tag", 0..1),
            ("masked_share", 1..1 + D),
            ("proof", 1 + D..1 + 2 * D),
            ("stamp", 1 + 2 * D..5 + 2 * D),
        ],
        _ => Vec::new(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedMessage> {
        if self.buf.len() - self.pos < n {
            return Err(MalformedMessage::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn byte(&mut self) -> Result<u8, MalformedMessage> {
        Ok(self.take(1)?[0])
    }

    fn digest(&mut self) -> Result<Digest, MalformedMessage> {
        let raw = self.take(DIGEST_LEN)?;
        Ok(Digest::from_slice(raw).expect("fixed width"))
    }

    fn stamp(&mut self) -> Result<Timestamp, MalformedMessage> {
        let raw: [u8; 4] = self.take(4)?.try_into().expect("fixed width");
        Ok(Timestamp::from_bytes(raw))
    }

    fn u32(&mut self) -> Result<u32, MalformedMessage> {
        let raw: [u8; 4] = self.take(4)?.try_into().expect("fixed width");
        Ok(u32::from_be_bytes(raw))
    }

    fn count(&mut self) -> Result<usize, MalformedMessage> {
        let n = self.u32()? as usize;
        // each element is at least one byte; cheap guard against bogus counts
        if n > self.buf.len() - self.pos {
            return Err(MalformedMessage::BadLength);
        }
        Ok(n)
    }

    fn var(&mut self) -> Result<&'a [u8], MalformedMessage> {
        let len = self.u32()? as usize;
        if len > self.buf.len() - self.pos {
            return Err(MalformedMessage::BadLength);
        }
        self.take(len)
    }

    fn string(&mut self) -> Result<String, MalformedMessage> {
        let raw = self.var()?;
        String::from_utf8(raw.to_vec()).map_err(|_| MalformedMessage::BadIdentity)
    }

    fn finish(self) -> Result<(), MalformedMessage> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(MalformedMessage::TrailingBytes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    fn d(n: u8) -> Digest {
        hash(&[&[n]])
    }

    #[test]
    fn edge_response_is_69_bytes() {
        let m = WireMessage::EdgeResponse {
            masked_nonce: d(1),
            proof: d(2),
            stamp: Timestamp(99),
        };
        assert_eq!(m.encode().len(), 1 + 32 + 32 + 4);
    }

    #[test]
    fn auth_request_empty_service_is_105_bytes() {
        let m = WireMessage::AuthRequest {
            service: vec![],
            pseudonym: d(1),
            masked_nonce: d(2),
            proof: d(3),
            stamp: Timestamp(7),
        };
        assert_eq!(m.encode().len(), 1 + 32 + 32 + 32 + 4 + 4);
    }

    #[test]
    fn accounted_bits_per_variant() {
        let auth = WireMessage::AuthRequest {
            service: b"tag:payload".to_vec(),
            pseudonym: d(1),
            masked_nonce: d(2),
            proof: d(3),
            stamp: Timestamp(7),
        };
        assert_eq!(auth.accounted_bits(), 800);
        let resp = WireMessage::EdgeResponse {
            masked_nonce: d(1),
            proof: d(2),
            stamp: Timestamp(9),
        };
        assert_eq!(resp.accounted_bits(), 544);
        let relay = WireMessage::CloudRequest {
            service: b"x".to_vec(),
            pseudonym: d(4),
            masked_share: d(5),
            proof: d(6),
            stamp: Timestamp(1),
        };
        assert_eq!(relay.accounted_bits(), 800);
        let back = WireMessage::CloudResponse {
            masked_share: d(7),
            proof: d(8),
            stamp: Timestamp(2),
        };
        assert_eq!(back.accounted_bits(), 544);
        let fin = WireMessage::EdgeRelay {
            masked_share: d(9),
            proof: d(10),
            stamp: Timestamp(3),
        };
        assert_eq!(fin.accounted_bits(), 544);
        // the two exchange totals the protocol is compared by
        assert_eq!(auth.accounted_bits() + resp.accounted_bits(), 1344);
        assert_eq!(
            auth.accounted_bits()
                + relay.accounted_bits()
                + back.accounted_bits()
                + fin.accounted_bits(),
            2688
        );
    }

    #[test]
    fn service_request_is_excluded_from_accounting() {
        let build = |service: Vec<u8>| WireMessage::AuthRequest {
            service,
            pseudonym: d(1),
            masked_nonce: d(2),
            proof: d(3),
            stamp: Timestamp(7),
        };
        let small = build(vec![]);
        let big = build(vec![0xAB; 4096]);
        assert_eq!(small.accounted_bits(), big.accounted_bits());
        assert_eq!(big.encode().len(), small.encode().len() + 4096);
    }

    #[test]
    fn decode_rejects_truncation() {
        let m = WireMessage::AuthRequest {
            service: b"svc".to_vec(),
            pseudonym: d(1),
            masked_nonce: d(2),
            proof: d(3),
            stamp: Timestamp(7),
        };
        let bytes = m.encode();
        for cut in [1, 10, 40, bytes.len() - 1] {
            assert!(WireMessage::decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn decode_rejects_unknown_tag() {
        assert_eq!(
            WireMessage::decode(&[0xFF, 0, 0]),
            Err(MalformedMessage::UnknownTag(0xFF))
        );
    }

    #[test]
    fn decode_rejects_empty_and_trailing() {
        assert_eq!(WireMessage::decode(&[]), Err(MalformedMessage::Empty));
        let mut bytes = WireMessage::EdgeResponse {
            masked_nonce: d(1),
            proof: d(2),
            stamp: Timestamp(1),
        }
        .encode();
        bytes.push(0);
        assert_eq!(
            WireMessage::decode(&bytes),
            Err(MalformedMessage::TrailingBytes)
        );
    }

    #[test]
    fn decode_rejects_oversized_length_prefix() {
        let m = WireMessage::RegisterCsRequest {
            cloud_id: "CS1".into(),
        };
        let mut bytes = m.encode();
        // inflate the length prefix beyond the remaining bytes
        bytes[1] = 0xFF;
        assert_eq!(
            WireMessage::decode(&bytes),
            Err(MalformedMessage::BadLength)
        );
    }

    #[test]
    fn field_ranges_tile_the_encoding_exactly() {
        let msgs = vec![
            WireMessage::AuthRequest {
                service: b"cam:frame".to_vec(),
                pseudonym: d(1),
                masked_nonce: d(2),
                proof: d(3),
                stamp: Timestamp(7),
            },
            WireMessage::EdgeResponse {
                masked_nonce: d(1),
                proof: d(2),
                stamp: Timestamp(7),
            },
            WireMessage::CloudRequest {
                service: b"x".to_vec(),
                pseudonym: d(1),
                masked_share: d(2),
                proof: d(3),
                stamp: Timestamp(7),
            },
            WireMessage::CloudResponse {
                masked_share: d(1),
                proof: d(2),
                stamp: Timestamp(7),
            },
            WireMessage::EdgeRelay {
                masked_share: d(1),
                proof: d(2),
                stamp: Timestamp(7),
            },
        ];
        for m in msgs {
            let encoded = m.encode();
            let ranges = field_ranges(&m);
            let mut cursor = 0;
            for (_, r) in &ranges {
                assert_eq!(r.start, cursor, "{} gapped", m.variant());
                cursor = r.end;
            }
            assert_eq!(cursor, encoded.len(), "{} incomplete", m.variant());
        }
        // registration messages stay out of reach
        assert!(field_ranges(&WireMessage::RegisterCsRequest {
            cloud_id: "CS1".into()
        })
        .is_empty());
    }

    #[test]
    fn cloud_response_round_trip() {
        let m = WireMessage::CloudResponse {
            masked_share: d(11),
            proof: d(12),
            stamp: Timestamp(123456),
        };
        assert_eq!(WireMessage::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn registration_round_trips() {
        let msgs = vec![
            WireMessage::RegisterCsRequest {
                cloud_id: "CS1".into(),
            },
            WireMessage::RegisterCsResponse {
                credential: d(1),
                secret_key: d(2),
                public_key: d(3),
            },
            WireMessage::RegisterEsRequest {
                edge_id: "ES1".into(),
                clouds: vec!["CS1".into(), "CS2".into()],
            },
            WireMessage::RegisterEsResponse {
                credential: d(4),
                secret_key: d(5),
                public_key: d(6),
                pairings: vec![CloudPairing {
                    cloud_id: "CS1".into(),
                    pseudonym: d(7),
                    credential: d(8),
                }],
            },
            WireMessage::RegisterDeviceRequest {
                user_id: "alice".into(),
                device_id: "d0".into(),
                pw_key: d(9),
                edges: vec!["ES1".into()],
                pseudonym_count: 16,
            },
            WireMessage::RegisterDeviceResponse {
                did: d(10),
                secret_key: d(11),
                public_key: d(12),
                bundles: vec![EdgeBundle {
                    edge_public_id: d(13),
                    pairs: vec![(d(14), d(15)), (d(16), d(17))],
                }],
            },
        ];
        for m in msgs {
            assert_eq!(WireMessage::decode(&m.encode()).unwrap(), m);
        }
    }

    proptest::proptest! {
        #[test]
        fn auth_messages_round_trip(
            svc in proptest::collection::vec(0u8.., 0..64),
            a in proptest::array::uniform32(0u8..),
            b in proptest::array::uniform32(0u8..),
            c in proptest::array::uniform32(0u8..),
            t in 0u32..,
            which in 0u8..5,
        ) {
            let (a, b, c) = (Digest(a), Digest(b), Digest(c));
            let m = match which {
                0 => WireMessage::AuthRequest { service: svc, pseudonym: a, masked_nonce: b, proof: c, stamp: Timestamp(t) },
                1 => WireMessage::EdgeResponse { masked_nonce: b, proof: c, stamp: Timestamp(t) },
                2 => WireMessage::CloudRequest { service: svc, pseudonym: a, masked_share: b, proof: c, stamp: Timestamp(t) },
                3 => WireMessage::CloudResponse { masked_share: b, proof: c, stamp: Timestamp(t) },
                _ => WireMessage::EdgeRelay { masked_share: b, proof: c, stamp: Timestamp(t) },
            };
            proptest::prop_assert_eq!(WireMessage::decode(&m.encode()).unwrap(), m);
        }

        #[test]
        fn canonical_encoding_is_injective(
            s1 in proptest::collection::vec(0u8.., 0..32),
            s2 in proptest::collection::vec(0u8.., 0..32),
            d1 in proptest::array::uniform32(0u8..),
            d2 in proptest::array::uniform32(0u8..),
            t1 in 0u32..,
            t2 in 0u32..,
        ) {
            // distinct (service, digest, stamp) tuples never share a
            // canonical concatenation
            let enc = |s: &[u8], d: &Digest, t: u32| {
                let mut out = canon_var(s);
                out.extend_from_slice(d.as_bytes());
                out.extend_from_slice(&Timestamp(t).to_bytes());
                out
            };
            let same_tuple = s1 == s2 && d1 == d2 && t1 == t2;
            let same_bytes = enc(&s1, &Digest(d1), t1) == enc(&s2, &Digest(d2), t2);
            proptest::prop_assert_eq!(same_tuple, same_bytes);
        }
    }
}
