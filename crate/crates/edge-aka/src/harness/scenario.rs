//! Scenario files: a deployment topology plus a script of actions with
//! per-action expectations.
//!
//! Scenarios are plain JSON so attack cases can be written, versioned
//! and replayed without code changes. Validation is strict: every
//! device, server, service route and message name a script refers to
//! must exist in the topology, and a scenario that references an
//! unknown party fails before anything runs.

use serde::{Deserialize, Serialize};

use crate::device::PoolMode;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario JSON is invalid: {0}")]
    BadJson(String),
    #[error("topology has no {0}")]
    Empty(&'static str),
    #[error("duplicate id `{0}` in topology")]
    DuplicateId(String),
    #[error("action {index}: unknown device `{name}`")]
    UnknownDevice { index: usize, name: String },
    #[error("action {index}: unknown edge server `{name}`")]
    UnknownEdge { index: usize, name: String },
    #[error("action {index}: unknown target `{name}`")]
    UnknownTarget { index: usize, name: String },
    #[error("edge `{edge}` routes to unregistered cloud `{cloud}`")]
    UnknownCloudRoute { edge: String, cloud: String },
    #[error("edge `{edge}` tag `{tag}`: route must be \"local\" or a cloud list")]
    BadRoute { edge: String, tag: String },
    #[error("device `{device}` names unregistered edge `{edge}`")]
    UnknownDeviceEdge { device: String, edge: String },
    #[error("action {index}: `{name}` is not a protocol message name")]
    BadMessageName { index: usize, name: String },
    #[error("action {index}: no transcript message has index {want}")]
    UnknownIndex { index: usize, want: u64 },
    #[error("action {index}: tamper offset {offset} is outside the message")]
    OffsetOutOfRange { index: usize, offset: usize },
    #[error("action {index}: truncation to {len} leaves the message whole")]
    BadTruncation { index: usize, len: usize },
    #[error("action {index}: mask must not be zero")]
    ZeroMask { index: usize },
    #[error("armed interceptor for `{message}` never fired")]
    UnfiredInterceptor { message: String },
    #[error("deployment build failed: {0}")]
    Build(String),
}

fn default_start_time() -> u32 {
    100_000
}
fn default_window() -> u32 {
    crate::DEFAULT_FRESHNESS_WINDOW
}
fn default_pool_size() -> u32 {
    crate::DEFAULT_POOL_SIZE
}
fn default_lockout() -> u32 {
    crate::DEFAULT_LOCKOUT_LIMIT
}

/// A deployment: parties, their wiring, and shared protocol parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start_time")]
    pub start_time: u32,
    #[serde(default = "default_window")]
    pub freshness_window: u32,
    #[serde(default = "default_pool_size")]
    pub pool_size: u32,
    #[serde(default)]
    pub pool_mode: PoolMode,
    #[serde(default = "default_lockout")]
    pub lockout_limit: u32,
    #[serde(default)]
    pub clouds: Vec<CloudSpec>,
    pub edges: Vec<EdgeSpec>,
    pub devices: Vec<DeviceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudSpec {
    pub id: String,
    /// Service tags this cloud server answers.
    pub services: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: String,
    /// Routing table in priority order.
    pub routes: Vec<RouteEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteEntry {
    pub tag: String,
    pub to: RouteTo,
}

/// `"local"` or a list of cloud ids in preference order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RouteTo {
    Local(String),
    Clouds(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub user: String,
    pub device: String,
    pub password: String,
    /// Edge servers to hold credentials for; all of them when omitted.
    #[serde(default)]
    pub edges: Option<Vec<String>>,
}

impl DeviceSpec {
    /// The name scripts refer to this device by.
    pub fn name(&self) -> String {
        format!("{}/{}", self.user, self.device)
    }
}

/// What an action is expected to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expect {
    /// Keys established and equal on both ends.
    Success,
    /// Any rejection.
    Rejected,
    RejectedProof,
    RejectedStale,
    RejectedReplay,
    RejectedMalformed,
    RejectedLockedOut,
    RejectedBadCredentials,
    RejectedUnknownService,
    RejectedNoSession,
    RejectedPoolExhausted,
    RejectedUnexpected,
    /// Every attempt of a multi-attempt action was rejected.
    AllRejected,
}

/// What actually happened when an action ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Success,
    RejectedProof,
    RejectedStale,
    RejectedReplay,
    RejectedMalformed,
    RejectedLockedOut,
    RejectedBadCredentials,
    RejectedUnknownService,
    RejectedNoSession,
    RejectedPoolExhausted,
    RejectedUnexpected,
    AllRejected,
    /// The two ends disagreed on the key; always a failure.
    KeyMismatch,
    /// Setup-style action with nothing to check.
    Neutral,
}

impl Expect {
    pub fn matches(&self, actual: OutcomeKind) -> bool {
        use OutcomeKind as O;
        match self {
            Expect::Success => actual == O::Success,
            Expect::Rejected => matches!(
                actual,
                O::RejectedProof
                    | O::RejectedStale
                    | O::RejectedReplay
                    | O::RejectedMalformed
                    | O::RejectedLockedOut
                    | O::RejectedBadCredentials
                    | O::RejectedUnknownService
                    | O::RejectedNoSession
                    | O::RejectedPoolExhausted
                    | O::RejectedUnexpected
            ),
            Expect::RejectedProof => actual == O::RejectedProof,
            Expect::RejectedStale => actual == O::RejectedStale,
            Expect::RejectedReplay => actual == O::RejectedReplay,
            Expect::RejectedMalformed => actual == O::RejectedMalformed,
            Expect::RejectedLockedOut => actual == O::RejectedLockedOut,
            Expect::RejectedBadCredentials => actual == O::RejectedBadCredentials,
            Expect::RejectedUnknownService => actual == O::RejectedUnknownService,
            Expect::RejectedNoSession => actual == O::RejectedNoSession,
            Expect::RejectedPoolExhausted => actual == O::RejectedPoolExhausted,
            Expect::RejectedUnexpected => actual == O::RejectedUnexpected,
            Expect::AllRejected => actual == O::AllRejected,
        }
    }
}

/// One scripted step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "kebab-case")]
pub enum Action {
    /// Local login on a device; `password` defaults to the topology one.
    Login {
        device: String,
        #[serde(default)]
        password: Option<String>,
        expect: Expect,
    },
    /// Full authentication exchange, pumped to completion.
    Auth {
        device: String,
        edge: String,
        service: String,
        expect: Expect,
    },
    /// Arm a one-shot bit flip on the next in-flight message of a kind.
    TamperNext {
        message: String,
        offset: usize,
        mask: u8,
    },
    /// Arm a one-shot truncation of the next in-flight message of a kind.
    TruncateNext { message: String, len: usize },
    /// Arm a one-shot replacement of the next in-flight message of a
    /// kind by a random well-formed forgery with a fresh stamp.
    ForgeNext { message: String },
    /// Re-send a tampered copy of transcript message `index` to its
    /// original destination.
    Tamper {
        index: u64,
        offset: usize,
        mask: u8,
        expect: Expect,
    },
    /// Re-send a truncated copy of transcript message `index`.
    Truncate {
        index: u64,
        len: usize,
        expect: Expect,
    },
    /// Re-send transcript message `index` verbatim.
    Replay { index: u64, expect: Expect },
    AdvanceClock { secs: u32 },
    /// Copy the device's store for the adversary, as a physical capture.
    StealDevice { device: String },
    /// Authentication attempts from a stolen store without the password:
    /// each attempt guesses the masking key.
    ForgeWithStolen {
        device: String,
        edge: String,
        service: String,
        attempts: u32,
        expect: Expect,
    },
    /// Send a random well-formed message of the named kind to a server.
    InjectForged {
        target: String,
        message: String,
        expect: Expect,
    },
    UpdatePassword {
        device: String,
        old: String,
        new: String,
        expect: Expect,
    },
}

/// Topology plus script: everything one run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    #[serde(default)]
    pub script: Vec<Action>,
}

const MESSAGE_NAMES: [&str; 5] = ["Msg1", "Msg2", "Msg3", "Msg4", "Msg5"];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::BadJson(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Static checks: ids unique, every script reference declared.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let t = &self.topology;
        if t.edges.is_empty() {
            return Err(ScenarioError::Empty("edge servers"));
        }
        if t.devices.is_empty() {
            return Err(ScenarioError::Empty("devices"));
        }
        let mut cloud_ids = Vec::new();
        for c in &t.clouds {
            if cloud_ids.contains(&c.id) {
                return Err(ScenarioError::DuplicateId(c.id.clone()));
            }
            cloud_ids.push(c.id.clone());
        }
        let mut edge_ids = Vec::new();
        for e in &t.edges {
            if edge_ids.contains(&e.id) || cloud_ids.contains(&e.id) {
                return Err(ScenarioError::DuplicateId(e.id.clone()));
            }
            edge_ids.push(e.id.clone());
            for r in &e.routes {
                match &r.to {
                    RouteTo::Local(word) if word != "local" => {
                        return Err(ScenarioError::BadRoute {
                            edge: e.id.clone(),
                            tag: r.tag.clone(),
                        });
                    }
                    RouteTo::Clouds(cids) => {
                        for cid in cids {
                            if !cloud_ids.contains(cid) {
                                return Err(ScenarioError::UnknownCloudRoute {
                                    edge: e.id.clone(),
                                    cloud: cid.clone(),
                                });
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut device_names = Vec::new();
        for d in &t.devices {
            let name = d.name();
            if device_names.contains(&name) {
                return Err(ScenarioError::DuplicateId(name));
            }
            device_names.push(name);
            if let Some(edges) = &d.edges {
                for eid in edges {
                    if !edge_ids.contains(eid) {
                        return Err(ScenarioError::UnknownDeviceEdge {
                            device: d.name(),
                            edge: eid.clone(),
                        });
                    }
                }
            }
        }

        let check_device = |index: usize, name: &str| {
            if device_names.iter().any(|n| n == name) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownDevice {
                    index,
                    name: name.into(),
                })
            }
        };
        let check_edge = |index: usize, name: &str| {
            if edge_ids.iter().any(|n| n == name) {
                Ok(())
            } else {
                Err(ScenarioError::UnknownEdge {
                    index,
                    name: name.into(),
                })
            }
        };
        let check_msg = |index: usize, name: &str| {
            if MESSAGE_NAMES.contains(&name) {
                Ok(())
            } else {
                Err(ScenarioError::BadMessageName {
                    index,
                    name: name.into(),
                })
            }
        };
        for (i, action) in self.script.iter().enumerate() {
            match action {
                Action::Login { device, .. } | Action::StealDevice { device } => {
                    check_device(i, device)?;
                }
                Action::Auth { device, edge, .. }
                | Action::ForgeWithStolen { device, edge, .. } => {
                    check_device(i, device)?;
                    check_edge(i, edge)?;
                }
                Action::TamperNext { message, mask, .. } => {
                    check_msg(i, message)?;
                    if *mask == 0 {
                        return Err(ScenarioError::ZeroMask { index: i });
                    }
                }
                Action::TruncateNext { message, .. } | Action::ForgeNext { message } => {
                    check_msg(i, message)?;
                }
                Action::Tamper { mask, .. } => {
                    if *mask == 0 {
                        return Err(ScenarioError::ZeroMask { index: i });
                    }
                }
                Action::InjectForged {
                    target, message, ..
                } => {
                    check_msg(i, message)?;
                    if !edge_ids.iter().any(|n| n == target)
                        && !cloud_ids.iter().any(|n| n == target)
                    {
                        return Err(ScenarioError::UnknownTarget {
                            index: i,
                            name: target.clone(),
                        });
                    }
                }
                Action::UpdatePassword { device, .. } => check_device(i, device)?,
                Action::Truncate { .. } | Action::Replay { .. } | Action::AdvanceClock { .. } => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Scenario {
        Scenario::from_json(
            r#"{
              "topology": {
                "seed": 1,
                "clouds": [{"id": "CS1", "services": ["archive"]}],
                "edges": [{"id": "ES1", "routes": [
                  {"tag": "telemetry", "to": "local"},
                  {"tag": "archive", "to": ["CS1"]}
                ]}],
                "devices": [{"user": "alice", "device": "d0", "password": "pw"}]
              },
              "script": [
                {"do": "auth", "device": "alice/d0", "edge": "ES1",
                 "service": "telemetry:x", "expect": "success"}
              ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_round_trips() {
        let s = minimal();
        assert_eq!(s.topology.freshness_window, crate::DEFAULT_FRESHNESS_WINDOW);
        assert_eq!(s.topology.pool_size, crate::DEFAULT_POOL_SIZE);
        let again = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(again.script.len(), 1);
    }

    #[test]
    fn rejects_unknown_references() {
        let mut s = minimal();
        s.script.push(Action::Auth {
            device: "ghost/d9".into(),
            edge: "ES1".into(),
            service: "telemetry:x".into(),
            expect: Expect::Success,
        });
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::UnknownDevice { index: 1, .. })
        ));
        let mut s = minimal();
        s.script.push(Action::Auth {
            device: "alice/d0".into(),
            edge: "ES9".into(),
            service: "t".into(),
            expect: Expect::Success,
        });
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::UnknownEdge { index: 1, .. })
        ));
        let mut s = minimal();
        s.script.push(Action::TamperNext {
            message: "Msg9".into(),
            offset: 0,
            mask: 1,
        });
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::BadMessageName { .. })
        ));
        let mut s = minimal();
        s.topology.edges[0].routes.push(RouteEntry {
            tag: "off".into(),
            to: RouteTo::Clouds(vec!["CS9".into()]),
        });
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::UnknownCloudRoute { .. })
        ));
    }

    #[test]
    fn rejects_duplicates_and_empties() {
        let mut s = minimal();
        s.topology.devices.push(s.topology.devices[0].clone());
        assert!(matches!(s.validate(), Err(ScenarioError::DuplicateId(_))));
        let mut s = minimal();
        s.topology.devices.clear();
        assert!(matches!(s.validate(), Err(ScenarioError::Empty("devices"))));
    }

    #[test]
    fn expectations_match_categories() {
        assert!(Expect::Success.matches(OutcomeKind::Success));
        assert!(!Expect::Success.matches(OutcomeKind::KeyMismatch));
        assert!(Expect::Rejected.matches(OutcomeKind::RejectedProof));
        assert!(Expect::Rejected.matches(OutcomeKind::RejectedReplay));
        assert!(!Expect::Rejected.matches(OutcomeKind::Success));
        assert!(!Expect::Rejected.matches(OutcomeKind::Neutral));
        assert!(Expect::RejectedStale.matches(OutcomeKind::RejectedStale));
        assert!(!Expect::RejectedStale.matches(OutcomeKind::RejectedProof));
    }

    #[test]
    fn route_to_accepts_both_shapes() {
        let local: RouteTo = serde_json::from_str("\"local\"").unwrap();
        assert!(matches!(local, RouteTo::Local(_)));
        let clouds: RouteTo = serde_json::from_str("[\"CS1\",\"CS2\"]").unwrap();
        assert!(matches!(clouds, RouteTo::Clouds(v) if v.len() == 2));
    }
}
