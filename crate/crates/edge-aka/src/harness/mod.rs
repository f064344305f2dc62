//! Deployment harness: a full simulated deployment of authority, cloud
//! and edge servers and devices wired through one adversarial channel.
//!
//! The harness exists to make two kinds of statements cheap to check:
//! that honest exchanges establish equal keys at the stated hash and
//! byte budgets, and that manipulated traffic, whatever the
//! manipulation, is rejected. [`runner::Runner`] drives a deployment
//! directly; [`scenario`] runs the same machinery from JSON files;
//! [`adversary`] packages the standard attack batteries;
//! [`metrics`] folds run costs into tables.

pub mod adversary;
pub mod channel;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use adversary::{run_all_batteries, run_battery, BatteryReport, BATTERY_NAMES};
pub use channel::{transcript_text, Envelope, Party};
pub use metrics::{emit_csv, emit_text, summarize, CostRecord, CostReport, ExchangeCase};
pub use runner::{
    run_scenario, run_stress, ActionOutcome, RunOutcome, Runner, ScenarioReport, StressReport,
};
pub use scenario::{
    Action, CloudSpec, DeviceSpec, EdgeSpec, Expect, OutcomeKind, RouteEntry, RouteTo, Scenario,
    ScenarioError, Topology,
};
