//! Benchmark-level scoring and report rendering.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BenchmarkManifest;
use crate::gateway::CostLedger;
use crate::orchestrator::Trajectory;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("accuracy of an empty benchmark is undefined")]
    ZeroTotal,
    #[error("trajectories do not cover the benchmark: missing {missing:?}, unexpected {unexpected:?}, duplicated {duplicated:?}")]
    CoverageMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
        duplicated: Vec<String>,
    },
}

/// `100 * passes / total` in hundredths of a percent, rounded half-up.
pub fn accuracy_basis_points(passes: u64, total: u64) -> Result<u64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::ZeroTotal);
    }
    Ok((20_000 * passes + total) / (2 * total))
}

/// `100 * passes / total` rounded half-up to two decimals.
pub fn accuracy(passes: u64, total: u64) -> Result<f64, MetricsError> {
    Ok(accuracy_basis_points(passes, total)? as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub benchmark: String,
    pub total_problems: u64,
    pub pass_count: u64,
    pub accuracy_pct: f64,
    pub pass_without_debug: u64,
    pub pass_with_debug: u64,
    pub format_fail_events: u64,
    pub format_fail_problems: u64,
    pub aborted_problems: u64,
    pub ledger: CostLedger,
    pub config_snapshot: String,
}

/// Scores one trajectory per benchmark problem.
pub fn score_run(trajs: &[Trajectory], benchmark: &BenchmarkManifest) -> Result<RunReport, MetricsError> {
    let expected: BTreeSet<&str> = benchmark.ids().collect();
    let mut seen = BTreeSet::new();
    let mut duplicated = BTreeSet::new();
    for t in trajs {
        if !seen.insert(t.problem_id.as_str()) {
            duplicated.insert(t.problem_id.clone());
        }
    }
    if seen != expected || !duplicated.is_empty() {
        return Err(MetricsError::CoverageMismatch {
            missing: expected.difference(&seen).map(|s| s.to_string()).collect(),
            unexpected: seen.difference(&expected).map(|s| s.to_string()).collect(),
            duplicated: duplicated.into_iter().collect(),
        });
    }
    let total = benchmark.problems.len() as u64;
    let mut r = RunReport {
        report_version: REPORT_VERSION,
        benchmark: benchmark.name.clone(),
        total_problems: total,
        pass_count: 0,
        accuracy_pct: 0.0,
        pass_without_debug: 0,
        pass_with_debug: 0,
        format_fail_events: 0,
        format_fail_problems: 0,
        aborted_problems: 0,
        ledger: trajs.iter().map(|t| &t.ledger).sum(),
        config_snapshot: String::new(),
    };
    for t in trajs {
        if t.is_accepted() {
            if t.solved_without_debug {
                r.pass_without_debug += 1;
            } else {
                r.pass_with_debug += 1;
            }
        }
        let events = t.format_failure_count() as u64;
        r.format_fail_events += events;
        r.format_fail_problems += u64::from(events > 0);
        r.aborted_problems += u64::from(t.abort.is_some());
    }
    r.pass_count = r.pass_without_debug + r.pass_with_debug;
    r.accuracy_pct = accuracy(r.pass_count, total)?;
    Ok(r)
}

impl RunReport {
    pub fn with_config(mut self, snapshot: impl Into<String>) -> Self {
        self.config_snapshot = snapshot.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected table or json)")),
        }
    }
}

/// `value / unit` rounded half-up to two decimals.
fn two_decimals(value: u64, unit: u64) -> String {
    let hundredths = (200 * value as u128 + unit as u128) / (2 * unit as u128);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Token counts as `5.08M` / `12.30K`; small counts are printed in full.
pub fn format_tokens(n: u64) -> String {
    match n {
        1_000_000.. => format!("{}M", two_decimals(n, 1_000_000)),
        1_000.. => format!("{}K", two_decimals(n, 1_000)),
        _ => n.to_string(),
    }
}

/// Integer with thousands separators: `3,095`.
pub fn format_count(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn format_duration_ms(ms: u64) -> String {
    match ms {
        3_600_000.. => format!("{} h", two_decimals(ms, 3_600_000)),
        60_000.. => format!("{} min", two_decimals(ms, 60_000)),
        _ => format!("{} s", two_decimals(ms, 1_000)),
    }
}

pub fn render_report(r: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Table => {
            let rows: Vec<(&str, String)> = vec![
                ("Benchmark", r.benchmark.clone()),
                ("Accuracy (%)", format!("{:.2}", r.accuracy_pct)),
                ("Pass Count", format_count(r.pass_count)),
                ("Pass w/o Debug", format_count(r.pass_without_debug)),
                ("Pass w/ Debug", format_count(r.pass_with_debug)),
                ("Format Fails", format_count(r.format_fail_events)),
                ("Format Fail Problems", format_count(r.format_fail_problems)),
                ("Aborted Problems", format_count(r.aborted_problems)),
            ];
            let cost: Vec<(&str, String)> = vec![
                ("Problems", format_count(r.total_problems)),
                ("Runtime", format_duration_ms(r.ledger.wall_time_ms)),
                ("Input Tokens", format_tokens(r.ledger.input_tokens)),
                ("Output Tokens", format_tokens(r.ledger.output_tokens)),
                ("API Calls", format_count(r.ledger.calls)),
            ];
            let width = rows.iter().chain(&cost).map(|(k, _)| k.len()).max().unwrap_or(0);
            let mut out = String::new();
            for (k, v) in &rows {
                out.push_str(&format!("{k:<width$}  {v}\n"));
            }
            out.push_str("\nCost\n");
            for (k, v) in &cost {
                out.push_str(&format!("{k:<width$}  {v}\n"));
            }
            out
        }
    }
}
