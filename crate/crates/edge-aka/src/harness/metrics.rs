//! Cost accounting for authentication runs.
//!
//! Every successful exchange yields one [`CostRecord`]: exact per-party
//! hash invocation counts (meter deltas around the exchange, login
//! excluded) and the accounted bit size of each message. Records
//! aggregate into a [`CostReport`] that renders as a text table and as
//! CSV. Counts are expected to be identical across runs of the same
//! case; the report tracks whether they were.

use std::fmt;

/// The two shapes an exchange can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeCase {
    /// Device and edge server finish alone.
    Direct,
    /// The edge server relays to a cloud server.
    Relayed,
}

impl fmt::Display for ExchangeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExchangeCase::Direct => write!(f, "Case 1"),
            ExchangeCase::Relayed => write!(f, "Case 2"),
        }
    }
}

/// Measured cost of one successful exchange.
#[derive(Debug, Clone)]
pub struct CostRecord {
    pub case: ExchangeCase,
    pub device_hashes: u64,
    pub edge_hashes: u64,
    pub cloud_hashes: u64,
    /// (message name, accounted bits) in send order.
    pub message_bits: Vec<(String, u64)>,
}

impl CostRecord {
    pub fn total_hashes(&self) -> u64 {
        self.device_hashes + self.edge_hashes + self.cloud_hashes
    }

    pub fn total_bits(&self) -> u64 {
        self.message_bits.iter().map(|(_, b)| b).sum()
    }
}

/// Aggregated costs of one case.
#[derive(Debug, Clone)]
pub struct CaseSummary {
    pub case: ExchangeCase,
    pub runs: u64,
    pub device_hashes: u64,
    pub edge_hashes: u64,
    pub cloud_hashes: u64,
    pub message_bits: Vec<(String, u64)>,
    /// Whether every run of this case had identical counts and sizes.
    pub uniform: bool,
}

impl CaseSummary {
    pub fn total_hashes(&self) -> u64 {
        self.device_hashes + self.edge_hashes + self.cloud_hashes
    }

    pub fn total_bits(&self) -> u64 {
        self.message_bits.iter().map(|(_, b)| b).sum()
    }
}

/// Both cases side by side; a case is `None` when no run exercised it.
#[derive(Debug, Clone, Default)]
pub struct CostReport {
    pub direct: Option<CaseSummary>,
    pub relayed: Option<CaseSummary>,
}

impl CostReport {
    pub fn cases(&self) -> impl Iterator<Item = &CaseSummary> {
        self.direct.iter().chain(self.relayed.iter())
    }
}

/// Folds run records into per-case summaries.
pub fn summarize(records: &[CostRecord]) -> CostReport {
    let mut report = CostReport::default();
    for r in records {
        let slot = match r.case {
            ExchangeCase::Direct => &mut report.direct,
            ExchangeCase::Relayed => &mut report.relayed,
        };
        match slot {
            None => {
                *slot = Some(CaseSummary {
                    case: r.case,
                    runs: 1,
                    device_hashes: r.device_hashes,
                    edge_hashes: r.edge_hashes,
                    cloud_hashes: r.cloud_hashes,
                    message_bits: r.message_bits.clone(),
                    uniform: true,
                });
            }
            Some(s) => {
                s.runs += 1;
                s.uniform &= s.device_hashes == r.device_hashes
                    && s.edge_hashes == r.edge_hashes
                    && s.cloud_hashes == r.cloud_hashes
                    && s.message_bits == r.message_bits;
            }
        }
    }
    report
}

/// Human-readable cost table.
pub fn emit_text(report: &CostReport) -> String {
    let mut out = String::new();
    out.push_str("Authentication cost\n");
    out.push_str("===================\n\n");
    out.push_str("Hash operations per run\n");
    out.push_str("  case    runs    device  edge  cloud  total\n");
    for s in report.cases() {
        out.push_str(&format!(
            "  {}  {:>6}  {:>6}  {:>4}  {:>5}  {:>5}{}\n",
            s.case,
            s.runs,
            s.device_hashes,
            s.edge_hashes,
            s.cloud_hashes,
            s.total_hashes(),
            if s.uniform { "" } else { "  (varied!)" },
        ));
    }
    out.push_str("\nMessage sizes (accounted bits)\n");
    for s in report.cases() {
        let parts: Vec<String> = s
            .message_bits
            .iter()
            .map(|(name, bits)| format!("{name}={bits}"))
            .collect();
        out.push_str(&format!("  {}: {}\n", s.case, parts.join(" ")));
    }
    for s in report.cases() {
        out.push_str(&format!("  {}: {} bits\n", s.case, s.total_bits()));
    }
    out
}

/// The same report as long-form CSV.
pub fn emit_csv(report: &CostReport) -> String {
    let mut out = String::from("record,case,name,value\n");
    for s in report.cases() {
        out.push_str(&format!("runs,{},runs,{}\n", s.case, s.runs));
        out.push_str(&format!("hashes,{},device,{}\n", s.case, s.device_hashes));
        out.push_str(&format!("hashes,{},edge,{}\n", s.case, s.edge_hashes));
        out.push_str(&format!("hashes,{},cloud,{}\n", s.case, s.cloud_hashes));
        out.push_str(&format!("hashes,{},total,{}\n", s.case, s.total_hashes()));
        for (name, bits) in &s.message_bits {
            out.push_str(&format!("bits,{},{},{}\n", s.case, name, bits));
        }
        out.push_str(&format!("bits,{},total,{}\n", s.case, s.total_bits()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct() -> CostRecord {
        CostRecord {
            case: ExchangeCase::Direct,
            device_hashes: 4,
            edge_hashes: 4,
            cloud_hashes: 0,
            message_bits: vec![("Msg1".into(), 800), ("Msg2".into(), 544)],
        }
    }

    fn relayed() -> CostRecord {
        CostRecord {
            case: ExchangeCase::Relayed,
            device_hashes: 5,
            edge_hashes: 7,
            cloud_hashes: 5,
            message_bits: vec![
                ("Msg1".into(), 800),
                ("Msg3".into(), 800),
                ("Msg4".into(), 544),
                ("Msg5".into(), 544),
            ],
        }
    }

    #[test]
    fn summary_counts_runs_and_checks_uniformity() {
        let records = vec![direct(), direct(), relayed()];
        let report = summarize(&records);
        let d = report.direct.as_ref().unwrap();
        assert_eq!(d.runs, 2);
        assert!(d.uniform);
        assert_eq!(d.total_hashes(), 8);
        assert_eq!(d.total_bits(), 1344);
        let r = report.relayed.as_ref().unwrap();
        assert_eq!(r.total_hashes(), 17);
        assert_eq!(r.total_bits(), 2688);

        let mut odd = direct();
        odd.device_hashes = 5;
        let report = summarize(&[direct(), odd]);
        assert!(!report.direct.unwrap().uniform);
    }

    #[test]
    fn text_table_carries_the_case_totals() {
        let report = summarize(&[direct(), relayed()]);
        let text = emit_text(&report);
        assert!(text.contains("Case 1: 1344 bits"));
        assert!(text.contains("Case 2: 2688 bits"));
        assert!(text.contains("Msg1=800"));
        assert!(!text.contains("varied"));
    }

    #[test]
    fn csv_is_complete_and_parseable() {
        let report = summarize(&[direct(), relayed()]);
        let csv = emit_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "record,case,name,value");
        assert!(lines.contains(&"hashes,Case 1,total,8"));
        assert!(lines.contains(&"hashes,Case 2,total,17"));
        assert!(lines.contains(&"bits,Case 1,total,1344"));
        assert!(lines.contains(&"bits,Case 2,total,2688"));
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 4);
        }
    }
}
