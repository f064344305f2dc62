//! The simulated open channel.
//!
//! Every protocol message travels as an [`Envelope`] through a single
//! queue the runner pumps. The channel is adversarial in the classic
//! sense: anything in flight can be read, copied, mutated, truncated,
//! replaced or re-sent, and the delivery hooks in the runner implement
//! exactly those capabilities. Registration traffic does not pass
//! through here; provisioning is out of band by assumption.

use std::fmt;

/// Address of a protocol participant inside one deployment. Indices
/// refer to the deployment's construction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Device(usize),
    Edge(usize),
    Cloud(usize),
    /// Origin of injected forgeries; swallows anything sent back to it.
    Adversary,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Device(i) => write!(f, "D{i}"),
            Party::Edge(i) => write!(f, "E{i}"),
            Party::Cloud(i) => write!(f, "C{i}"),
            Party::Adversary => write!(f, "A"),
        }
    }
}

/// One message in flight: routing metadata around the encoded payload.
///
/// `index` is assigned when the message is sent and doubles as its
/// transcript position; `corr` ties the messages of one exchange
/// together across all three parties.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub index: u64,
    pub src: Party,
    pub dst: Party,
    pub corr: u64,
    pub payload: Vec<u8>,
}

impl Envelope {
    /// Transcript line: stable, byte-exact under a fixed seed.
    pub fn transcript_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.index,
            self.src,
            self.dst,
            self.corr,
            hex::encode(&self.payload)
        )
    }
}

/// Formats a whole transcript.
pub fn transcript_text(envelopes: &[Envelope]) -> String {
    let mut out = String::new();
    for env in envelopes {
        out.push_str(&env.transcript_line());
        out.push('\n');
    }
    out
}
