//! Built-in adversary batteries.
//!
//! Each battery builds a small fixed deployment, drives a family of
//! attacks against it through the open channel and tallies how many
//! attempts any party accepted. A healthy protocol rejects every
//! attempt in every battery; a single acceptance is a finding, not a
//! flake, because the runs are deterministic in the seed.

use crate::harness::channel::Party;
use crate::harness::runner::{RunOutcome, Runner};
use crate::harness::scenario::{
    CloudSpec, DeviceSpec, EdgeSpec, Expect, OutcomeKind, RouteEntry, RouteTo, ScenarioError,
    Topology,
};
use crate::wire::{field_ranges, WireMessage};

/// Service strings the batteries authenticate for; the tag before the
/// colon selects the route.
pub const DIRECT_SERVICE: &[u8] = b"telemetry:read";
pub const RELAY_SERVICE: &[u8] = b"archive:store";

/// Tally of one battery: every attempt must end rejected.
#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub name: String,
    pub attempts: u64,
    pub rejected: u64,
    pub accepted: u64,
    /// One entry per accepted attempt: what got through and how.
    pub accepted_details: Vec<String>,
    /// Infrastructure problems (honest baseline broke); not acceptances.
    pub sanity: Vec<String>,
}

impl BatteryReport {
    fn new(name: &str) -> BatteryReport {
        BatteryReport {
            name: name.into(),
            attempts: 0,
            rejected: 0,
            accepted: 0,
            accepted_details: Vec::new(),
            sanity: Vec::new(),
        }
    }

    fn tally(&mut self, outcome: &RunOutcome, label: impl Into<String>) {
        self.attempts += 1;
        if Expect::Rejected.matches(outcome.kind) {
            self.rejected += 1;
        } else {
            self.accepted += 1;
            self.accepted_details.push(format!(
                "{}: {:?} ({})",
                label.into(),
                outcome.kind,
                outcome.detail
            ));
        }
    }

    /// True when nothing got through and the deployment stayed honest.
    pub fn clean(&self) -> bool {
        self.accepted == 0 && self.attempts == self.rejected && self.sanity.is_empty()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{:<20} {:>4} attempts  {:>4} rejected  {:>2} accepted  {}",
            self.name,
            self.attempts,
            self.rejected,
            self.accepted,
            if self.clean() { "CLEAN" } else { "BREACHED" }
        )
    }
}

/// The deployment every battery attacks: two devices, two edge servers
/// with one direct and one relayed tag each, one cloud server.
pub fn battery_topology(seed: u64) -> Topology {
    Topology {
        seed,
        start_time: 100_000,
        freshness_window: crate::DEFAULT_FRESHNESS_WINDOW,
        pool_size: crate::DEFAULT_POOL_SIZE,
        pool_mode: Default::default(),
        lockout_limit: crate::DEFAULT_LOCKOUT_LIMIT,
        clouds: vec![CloudSpec {
            id: "CS1".into(),
            services: vec!["archive".into(), "analytics".into()],
        }],
        edges: vec![
            EdgeSpec {
                id: "ES1".into(),
                routes: vec![
                    RouteEntry {
                        tag: "telemetry".into(),
                        to: RouteTo::Local("local".into()),
                    },
                    RouteEntry {
                        tag: "archive".into(),
                        to: RouteTo::Clouds(vec!["CS1".into()]),
                    },
                ],
            },
            EdgeSpec {
                id: "ES2".into(),
                routes: vec![
                    RouteEntry {
                        tag: "telemetry".into(),
                        to: RouteTo::Local("local".into()),
                    },
                    RouteEntry {
                        tag: "analytics".into(),
                        to: RouteTo::Clouds(vec!["CS1".into()]),
                    },
                ],
            },
        ],
        devices: vec![
            DeviceSpec {
                user: "alice".into(),
                device: "d0".into(),
                password: "correct horse battery".into(),
                edges: None,
            },
            DeviceSpec {
                user: "bob".into(),
                device: "d1".into(),
                password: "hunter2hunter2".into(),
                edges: None,
            },
        ],
    }
}

fn ensure_success(outcome: &RunOutcome, what: &str) -> Result<(), ScenarioError> {
    if outcome.kind == OutcomeKind::Success {
        Ok(())
    } else {
        Err(ScenarioError::Build(format!(
            "honest baseline `{what}` failed: {}",
            outcome.detail
        )))
    }
}

/// Replays every recorded message of one direct and one relayed
/// exchange, then the opening request again after the window has
/// passed. All must be rejected.
pub fn replay_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let topology = battery_topology(seed);
    let mut runner = Runner::new(&topology)?;
    let mut report = BatteryReport::new("replay");
    ensure_success(&runner.run_auth(0, 0, DIRECT_SERVICE), "direct")?;
    ensure_success(&runner.run_auth(0, 0, RELAY_SERVICE), "relayed")?;
    for index in 0..runner.transcript().len() as u64 {
        let outcome = runner.replay_entry(index)?;
        report.tally(&outcome, format!("replay #{index}"));
    }
    // Outside the freshness window the cache may have forgotten the
    // request; staleness must reject it instead.
    runner.clock().advance(topology.freshness_window + 1);
    let outcome = runner.replay_entry(0)?;
    report.tally(&outcome, "replay #0 after window");
    Ok(report)
}

/// Flips bits in every field of every protocol message kind, two per
/// field (first and last byte), each against a fresh exchange.
pub fn tamper_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let topology = battery_topology(seed);
    let mut runner = Runner::new(&topology)?;
    let mut report = BatteryReport::new("tamper");
    ensure_success(&runner.run_auth(0, 0, DIRECT_SERVICE), "direct")?;
    ensure_success(&runner.run_auth(0, 0, RELAY_SERVICE), "relayed")?;

    // One sample payload per message kind, harvested from the honest
    // baseline so field offsets match what the attack runs will carry.
    let mut samples: Vec<(String, Vec<u8>)> = Vec::new();
    for env in runner.transcript() {
        if let Ok(msg) = WireMessage::decode(&env.payload) {
            if !samples.iter().any(|(name, _)| *name == msg.variant()) {
                samples.push((msg.variant().to_string(), env.payload.clone()));
            }
        }
    }

    for (name, payload) in samples {
        let msg = WireMessage::decode(&payload).expect("sampled from transcript");
        let service = match name.as_str() {
            "Msg1" | "Msg2" => DIRECT_SERVICE,
            _ => RELAY_SERVICE,
        };
        for (field, range) in field_ranges(&msg) {
            for (offset, mask) in [(range.start, 0x01u8), (range.end - 1, 0x80u8)] {
                runner.arm_tamper(&name, offset, mask)?;
                let outcome = runner.run_auth(0, 0, service);
                report.tally(
                    &outcome,
                    format!("{name} {field} byte {offset} mask {mask:#04x}"),
                );
            }
        }
    }
    Ok(report)
}

/// Forged opening requests without any registered credentials.
pub fn impersonate_device_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let mut runner = Runner::new(&battery_topology(seed))?;
    let mut report = BatteryReport::new("impersonate-device");
    for n in 0..25 {
        for e in 0..2 {
            runner.clock().advance(1);
            let outcome = runner.inject(Party::Edge(e), "Msg1")?;
            report.tally(&outcome, format!("forged Msg1 #{n} at edge {e}"));
        }
    }
    Ok(report)
}

/// A fake edge server: replaces each message an edge server would send
/// during live exchanges, and injects standalone forged relays.
pub fn impersonate_es_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let mut runner = Runner::new(&battery_topology(seed))?;
    let mut report = BatteryReport::new("impersonate-es");
    for n in 0..8 {
        for (name, service) in [
            ("Msg2", DIRECT_SERVICE),
            ("Msg3", RELAY_SERVICE),
            ("Msg5", RELAY_SERVICE),
        ] {
            runner.arm_forge(name)?;
            let outcome = runner.run_auth(0, 0, service);
            report.tally(&outcome, format!("forged {name} #{n} in flight"));
        }
        runner.clock().advance(1);
        let outcome = runner.inject(Party::Cloud(0), "Msg3")?;
        report.tally(&outcome, format!("forged Msg3 #{n} at cloud"));
    }
    Ok(report)
}

/// A fake cloud server: replaces relay responses in flight and injects
/// standalone ones.
pub fn impersonate_cs_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let mut runner = Runner::new(&battery_topology(seed))?;
    let mut report = BatteryReport::new("impersonate-cs");
    for n in 0..8 {
        runner.arm_forge("Msg4")?;
        let outcome = runner.run_auth(0, 0, RELAY_SERVICE);
        report.tally(&outcome, format!("forged Msg4 #{n} in flight"));
        runner.clock().advance(1);
        let outcome = runner.inject(Party::Edge(0), "Msg4")?;
        report.tally(&outcome, format!("forged Msg4 #{n} injected"));
    }
    Ok(report)
}

/// Physical capture: copy a device store, then start exchanges from it
/// by guessing the password key that unmasks the stored credentials.
/// The honest owner must still be able to authenticate afterwards.
pub fn stolen_device_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let mut runner = Runner::new(&battery_topology(seed))?;
    let mut report = BatteryReport::new("steal-device");
    runner.steal_device(0);
    for (service, label) in [(DIRECT_SERVICE, "direct"), (RELAY_SERVICE, "relayed")] {
        let (accepted, outcome) = runner.forge_with_stolen(0, 0, service, 60)?;
        report.attempts += 60;
        report.rejected += u64::from(60 - accepted);
        report.accepted += u64::from(accepted);
        if accepted > 0 {
            report
                .accepted_details
                .push(format!("{label}: {}", outcome.detail));
        }
    }
    let honest = runner.run_auth(0, 0, DIRECT_SERVICE);
    if honest.kind != OutcomeKind::Success {
        report.sanity.push(format!(
            "owner could not authenticate after the theft: {}",
            honest.detail
        ));
    }
    Ok(report)
}

/// Online password guessing against the local store: wrong guesses are
/// rejected and the store locks after the configured limit, at which
/// point even the right password is refused.
pub fn password_guessing_battery(seed: u64) -> Result<BatteryReport, ScenarioError> {
    let topology = battery_topology(seed);
    let limit = topology.lockout_limit;
    let correct = topology.devices[0].password.clone();
    let mut runner = Runner::new(&topology)?;
    let mut report = BatteryReport::new("password-guessing");
    for n in 0..limit + 2 {
        let outcome = runner.login_device(0, &format!("guess-{n}"));
        report.tally(&outcome, format!("wrong password #{n}"));
    }
    // The lockout must not discriminate: the true password is refused too.
    let outcome = runner.login_device(0, &correct);
    report.tally(&outcome, "correct password after lockout");
    if outcome.kind != OutcomeKind::RejectedLockedOut {
        report
            .sanity
            .push("store did not lock after the limit".into());
    }
    Ok(report)
}

/// Names accepted by [`run_battery`], in display order.
pub const BATTERY_NAMES: [&str; 7] = [
    "replay",
    "tamper",
    "impersonate-device",
    "impersonate-es",
    "impersonate-cs",
    "steal-device",
    "password-guessing",
];

/// Runs one battery by name.
pub fn run_battery(name: &str, seed: u64) -> Result<BatteryReport, ScenarioError> {
    match name {
        "replay" => replay_battery(seed),
        "tamper" => tamper_battery(seed),
        "impersonate-device" => impersonate_device_battery(seed),
        "impersonate-es" => impersonate_es_battery(seed),
        "impersonate-cs" => impersonate_cs_battery(seed),
        "steal-device" => stolen_device_battery(seed),
        "password-guessing" => password_guessing_battery(seed),
        other => Err(ScenarioError::Build(format!("no battery named `{other}`"))),
    }
}

/// Runs every battery under the same seed.
pub fn run_all_batteries(seed: u64) -> Result<Vec<BatteryReport>, ScenarioError> {
    BATTERY_NAMES
        .iter()
        .map(|name| run_battery(name, seed))
        .collect()
}
