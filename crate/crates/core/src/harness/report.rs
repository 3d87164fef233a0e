use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Condition, ExperimentConfig, ExperimentId};
use crate::agent::TrialResult;
use crate::runtime::{AuditRecord, BatteryReport};
use crate::stats::wilson;
use crate::worldsim::TaskId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task: TaskId,
    pub index: u32,
    pub seed: u64,
    pub success: bool,
    pub steps: u32,
    pub replans: u32,
    pub recoveries: u32,
    pub blocked: u32,
    /// Hex SHA-256 prefix of the JSON trace.
    pub trace_digest: String,
}

impl TrialRecord {
    pub fn new(task: TaskId, index: u32, seed: u64, r: &TrialResult) -> Self {
        let json = serde_json::to_vec(&r.trace).expect("trace serialises");
        let digest = Sha256::digest(&json);
        let trace_digest = digest[..12].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            task,
            index,
            seed,
            success: r.success,
            steps: r.steps,
            replans: r.replans,
            recoveries: r.recoveries,
            blocked: r.blocked,
            trace_digest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: u64,
    pub successes: u64,
    pub success_pct: f64,
    pub ci_low_pct: f64,
    pub ci_high_pct: f64,
    pub mean_steps: f64,
    pub mean_replans: f64,
    pub mean_recoveries: f64,
}

impl Aggregate {
    pub fn from_records(trials: &[TrialRecord]) -> Option<Self> {
        let n = trials.len() as u64;
        if n == 0 {
            return None;
        }
        let successes = trials.iter().filter(|t| t.success).count() as u64;
        let ci = wilson(successes, n).ok()?;
        let mean = |f: fn(&TrialRecord) -> u32| trials.iter().map(|t| f64::from(f(t))).sum::<f64>() / n as f64;
        Some(Self {
            n,
            successes,
            success_pct: 100.0 * successes as f64 / n as f64,
            ci_low_pct: 100.0 * ci.lower,
            ci_high_pct: 100.0 * ci.upper,
            mean_steps: mean(|t| t.steps),
            mean_replans: mean(|t| t.replans),
            mean_recoveries: mean(|t| t.recoveries),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub label: String,
    pub task: Option<TaskId>,
    pub p_fail: Option<f64>,
    pub aggregate: Aggregate,
    pub trials: Vec<TrialRecord>,
}

impl ConditionReport {
    pub(super) fn new(c: &Condition, trials: Vec<TrialRecord>) -> Self {
        let aggregate = Aggregate::from_records(&trials).unwrap_or(Aggregate {
            n: 0,
            successes: 0,
            success_pct: 0.0,
            ci_low_pct: 0.0,
            ci_high_pct: 0.0,
            mean_steps: 0.0,
            mean_replans: 0.0,
            mean_recoveries: 0.0,
        });
        Self { name: c.name(), label: c.label.clone(), task: c.task, p_fail: c.p_fail, aggregate, trials }
    }

    pub fn for_task(&self, task: TaskId) -> Vec<TrialRecord> {
        self.trials.iter().filter(|t| t.task == task).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherRow {
    pub task: TaskId,
    pub a: String,
    pub b: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapReport {
    pub attempted: u32,
    pub succeeded: u32,
    /// Swaps where the prior snapshot stayed intact and the new one had both packages active.
    pub atomic: u32,
    /// Clean-table trials refused before the swap.
    pub rejected_before_swap: u32,
    pub failures: Vec<String>,
}

/// Wall-clock measurements. Not part of the deterministic report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    /// Atomic publish of the staged registry.
    pub swap_ns: Vec<u64>,
    /// Registry mutation while staging: insert plus lifecycle transitions.
    pub update_ns: Vec<u64>,
    /// Whole two-phase trial: dumpling run, swap, clean-table run.
    pub trial_ns: Vec<u64>,
}

fn median(xs: &[u64]) -> Option<u64> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.get(v.len() / 2).copied()
}

impl Timings {
    pub fn median_swap_ns(&self) -> Option<u64> {
        median(&self.swap_ns)
    }

    pub fn median_update_ns(&self) -> Option<u64> {
        median(&self.update_ns)
    }

    pub fn median_trial_ns(&self) -> Option<u64> {
        median(&self.trial_ns)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub conditions: Vec<ConditionReport>,
    pub fisher: Vec<FisherRow>,
    /// Policy enabled, policy disabled.
    pub battery: Option<(BatteryReport, BatteryReport)>,
    pub swap: Option<SwapReport>,
    #[serde(skip)]
    pub audit: Vec<AuditRecord>,
    #[serde(skip)]
    pub timings: Option<Timings>,
}

impl ExperimentReport {
    pub fn empty(config: ExperimentConfig) -> Self {
        Self { config, conditions: Vec::new(), fisher: Vec::new(), battery: None, swap: None, audit: Vec::new(), timings: None }
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn find(&self, label: &str, task: TaskId) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.label == label && c.task == Some(task))
    }

    /// Deterministic JSON: everything except wall-clock timings and the audit log.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

const COLUMNS: [&str; 8] = ["condition", "success_pct", "ci_low", "ci_high", "steps", "replans", "recoveries", "p_value"];
const MD_COLUMNS: [&str; 8] = ["Condition", "Success %", "CI low", "CI high", "Steps", "Replans", "Recoveries", "p-value"];
const BATTERY_COLUMNS: [&str; 6] = ["policy", "checks", "invalid_blocked_pct", "false_accept_pct", "false_reject_pct", "misattributed"];

fn row(format: TableFormat, cells: &[String]) -> String {
    match format {
        TableFormat::Csv => cells.join(",") + "\n",
        TableFormat::Markdown => format!("| {} |\n", cells.join(" | ")),
    }
}

fn header(format: TableFormat, csv: &[&str], md: &[&str]) -> String {
    match format {
        TableFormat::Csv => row(format, &csv.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>()),
        TableFormat::Markdown => {
            let mut out = row(format, &md.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>());
            let rule: Vec<String> = md.iter().enumerate().map(|(i, _)| if i == 0 { "---".into() } else { "---:".into() }).collect();
            out += &row(format, &rule);
            out
        }
    }
}

fn pct(x: f64) -> String {
    format!("{x:.1}")
}

fn pvalue_text(p: f64) -> String {
    if p < 0.001 {
        "p<0.001".into()
    } else {
        format!("p={p:.3}")
    }
}

fn cell_with_ci(a: &Aggregate) -> String {
    format!("{} [{}, {}]", pct(a.success_pct), pct(a.ci_low_pct), pct(a.ci_high_pct))
}

/// Renders a report as a table. A report with no rows yields the header only.
pub fn emit_table(report: &ExperimentReport, format: TableFormat) -> String {
    if let Some((on, off)) = &report.battery {
        return battery_table(on, off, format);
    }
    if report.config.id == ExperimentId::E3 {
        return header(format, &BATTERY_COLUMNS, &BATTERY_COLUMNS);
    }
    if format == TableFormat::Markdown && !report.conditions.is_empty() {
        match report.config.id {
            ExperimentId::E4 => return task_grid(report, true),
            ExperimentId::E5 | ExperimentId::E7 => return task_grid(report, false),
            ExperimentId::E8 => return sweep_grid(report),
            _ => {}
        }
    }
    long_table(report, format)
}

fn long_table(report: &ExperimentReport, format: TableFormat) -> String {
    let mut out = header(format, &COLUMNS, &MD_COLUMNS);
    for c in &report.conditions {
        let a = &c.aggregate;
        let p = report
            .fisher
            .iter()
            .find(|f| Some(f.task) == c.task && f.b == c.label)
            .map(|f| format!("{:.4}", f.p_value))
            .unwrap_or_default();
        out += &row(
            format,
            &[
                c.name.clone(),
                pct(a.success_pct),
                pct(a.ci_low_pct),
                pct(a.ci_high_pct),
                format!("{:.2}", a.mean_steps),
                format!("{:.2}", a.mean_replans),
                format!("{:.2}", a.mean_recoveries),
                p,
            ],
        );
    }
    if let Some(s) = &report.swap {
        if s.attempted > 0 {
            let ci = wilson(u64::from(s.succeeded), u64::from(s.attempted)).expect("attempted > 0");
            let rate = 100.0 * f64::from(s.succeeded) / f64::from(s.attempted);
            let cells = [
                "swap".to_owned(),
                pct(rate),
                pct(100.0 * ci.lower),
                pct(100.0 * ci.upper),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ];
            out += &row(format, &cells);
        }
    }
    out
}

fn labels(report: &ExperimentReport) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in &report.conditions {
        if !out.contains(&c.label) {
            out.push(c.label.clone());
        }
    }
    out
}

fn task_grid(report: &ExperimentReport, with_fisher: bool) -> String {
    let f = TableFormat::Markdown;
    let mut cols = vec!["Architecture".to_owned()];
    cols.extend(TaskId::ALL.iter().map(|t| t.to_string()));
    cols.push("Mean".into());
    let mut out = row(f, &cols);
    let rule: Vec<String> = cols.iter().enumerate().map(|(i, _)| if i == 0 { "---".into() } else { "---:".into() }).collect();
    out += &row(f, &rule);
    for label in labels(report) {
        let mut cells = vec![label.clone()];
        let mut rates = Vec::new();
        for task in TaskId::ALL {
            match report.find(&label, task) {
                Some(c) => {
                    rates.push(c.aggregate.success_pct);
                    cells.push(cell_with_ci(&c.aggregate));
                }
                None => cells.push(String::new()),
            }
        }
        let mean = if rates.is_empty() { String::new() } else { pct(rates.iter().sum::<f64>() / rates.len() as f64) };
        cells.push(mean);
        out += &row(f, &cells);
    }
    if with_fisher && !report.fisher.is_empty() {
        let mut bs: Vec<&str> = Vec::new();
        for r in &report.fisher {
            if !bs.contains(&r.b.as_str()) {
                bs.push(&r.b);
            }
        }
        out.push('\n');
        for b in bs {
            let parts: Vec<String> =
                report.fisher.iter().filter(|r| r.b == b).map(|r| format!("{} {}", r.task, pvalue_text(r.p_value))).collect();
            let a = report.fisher.iter().find(|r| r.b == b).map(|r| r.a.as_str()).unwrap_or("agent");
            let _ = writeln!(out, "One-sided Fisher exact test, {a} vs {b}: {}.", parts.join(", "));
        }
    }
    out
}

fn sweep_grid(report: &ExperimentReport) -> String {
    let f = TableFormat::Markdown;
    let mut grid: Vec<f64> = Vec::new();
    for c in &report.conditions {
        if let Some(p) = c.p_fail {
            if !grid.iter().any(|g| (g - p).abs() < 1e-12) {
                grid.push(p);
            }
        }
    }
    let mut cols = vec!["Architecture".to_owned()];
    cols.extend(grid.iter().map(|p| format!("p={p:.1}")));
    let mut out = row(f, &cols);
    let rule: Vec<String> = cols.iter().enumerate().map(|(i, _)| if i == 0 { "---".into() } else { "---:".into() }).collect();
    out += &row(f, &rule);
    for label in labels(report) {
        let mut cells = vec![label.clone()];
        for p in &grid {
            let c = report.conditions.iter().find(|c| c.label == label && c.p_fail.is_some_and(|q| (q - p).abs() < 1e-12));
            cells.push(c.map(|c| pct(c.aggregate.success_pct)).unwrap_or_default());
        }
        out += &row(f, &cells);
    }
    out
}

fn battery_table(on: &BatteryReport, off: &BatteryReport, format: TableFormat) -> String {
    let mut out = header(format, &BATTERY_COLUMNS, &BATTERY_COLUMNS);
    for (name, b) in [("enabled", on), ("disabled", off)] {
        out += &row(
            format,
            &[
                name.to_owned(),
                b.checks.to_string(),
                pct(b.blocked_pct),
                pct(b.false_accept_pct),
                pct(b.false_reject_pct),
                b.misattributed.to_string(),
            ],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let r = ExperimentReport::empty(ExperimentConfig::defaults(ExperimentId::E1));
        assert_eq!(emit_table(&r, TableFormat::Csv), "condition,success_pct,ci_low,ci_high,steps,replans,recoveries,p_value\n");
        assert_eq!(emit_table(&r, TableFormat::Markdown).lines().count(), 2);
        let r = ExperimentReport::empty(ExperimentConfig::defaults(ExperimentId::E4));
        assert_eq!(emit_table(&r, TableFormat::Markdown).lines().count(), 2);
    }

    #[test]
    fn aggregate_of_nothing() {
        assert!(Aggregate::from_records(&[]).is_none());
    }

    #[test]
    fn pvalue_formatting() {
        assert_eq!(pvalue_text(0.0297), "p=0.030");
        assert_eq!(pvalue_text(0.0004), "p<0.001");
    }
}
