//! Stage tables over trial outcomes, and report comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::TaskId;
use crate::orchestrator::Deployment;

use super::TrialOutcome;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("no outcomes to aggregate")]
    Empty,
    #[error("trial {label}#{trial} violates stage monotonicity")]
    NotMonotone { label: String, trial: usize },
    #[error("cell {cell} mixes trials from different labels, tasks or deployments")]
    MixedCell { cell: usize },
    #[error("reports have different cells: {0}")]
    Mismatch(String),
    #[error("unknown report format `{0}`; expected md or csv")]
    Format(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellStats {
    pub label: String,
    pub task: TaskId,
    pub deployment: Deployment,
    pub trials: usize,
    pub approaching: usize,
    pub disassembly: usize,
    #[serde(rename = "final")]
    pub final_success: usize,
    pub recovered: usize,
    /// Mean simulated time over final successes.
    pub mean_success_time_s: Option<f64>,
}

impl CellStats {
    pub fn final_rate(&self) -> f64 {
        self.final_success as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub cells: Vec<CellStats>,
}

impl Report {
    pub fn cell(&self, label: &str) -> Option<&CellStats> {
        self.cells.iter().find(|c| c.label == label)
    }
}

/// Per-cell stage counts, ordered by cell index.
pub fn aggregate(outcomes: &[TrialOutcome]) -> Result<Report, ReportError> {
    if outcomes.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: BTreeMap<usize, Vec<&TrialOutcome>> = BTreeMap::new();
    for o in outcomes {
        let r = &o.result;
        if (r.final_success && !r.disassembly) || (r.disassembly && !r.approaching) {
            return Err(ReportError::NotMonotone {
                label: o.label.clone(),
                trial: o.trial,
            });
        }
        groups.entry(o.cell).or_default().push(o);
    }
    let cells = groups
        .into_iter()
        .map(|(cell, g)| {
            let first = g[0];
            if g.iter()
                .any(|o| o.label != first.label || o.task != first.task || o.deployment != first.deployment)
            {
                return Err(ReportError::MixedCell { cell });
            }
            let count = |f: fn(&TrialOutcome) -> bool| g.iter().filter(|o| f(o)).count();
            let times: Vec<f64> = g
                .iter()
                .filter(|o| o.result.final_success)
                .map(|o| o.result.time_s)
                .collect();
            Ok(CellStats {
                label: first.label.clone(),
                task: first.task,
                deployment: first.deployment,
                trials: g.len(),
                approaching: count(|o| o.result.approaching),
                disassembly: count(|o| o.result.disassembly),
                final_success: count(|o| o.result.final_success),
                recovered: count(|o| o.result.recovered),
                mean_success_time_s: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Report { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub label_a: String,
    pub label_b: String,
    pub task: TaskId,
    /// Final success rate of `a` minus that of `b`, in percentage points.
    pub final_delta_pp: f64,
    /// Mean success time of `a` over that of `b`.
    pub time_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cells: Vec<CellDelta>,
}

/// Cells are matched by position and must agree on task.
pub fn compare(a: &Report, b: &Report) -> Result<Comparison, ReportError> {
    if a.cells.len() != b.cells.len() {
        return Err(ReportError::Mismatch(format!(
            "{} vs {} cells",
            a.cells.len(),
            b.cells.len()
        )));
    }
    let cells = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(x, y)| {
            if x.task != y.task {
                return Err(ReportError::Mismatch(format!(
                    "`{}` is {} but `{}` is {}",
                    x.label, x.task, y.label, y.task
                )));
            }
            let time_ratio = match (x.mean_success_time_s, y.mean_success_time_s) {
                (Some(tx), Some(ty)) if ty > 0.0 => Some(tx / ty),
                _ => None,
            };
            Ok(CellDelta {
                label_a: x.label.clone(),
                label_b: y.label.clone(),
                task: x.task,
                final_delta_pp: 100.0 * (x.final_rate() - y.final_rate()),
                time_ratio,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Comparison { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(ReportError::Format(other.to_owned())),
        }
    }
}

fn deployment_name(d: Deployment) -> &'static str {
    match d {
        Deployment::SelfVla => "SELF-VLA",
        Deployment::EndToEnd => "end-to-end",
    }
}

fn markdown(report: &Report) -> String {
    let mut out = String::new();
    for task in TaskId::ALL {
        let cells: Vec<&CellStats> = report.cells.iter().filter(|c| c.task == task).collect();
        if cells.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "## {}\n", task.display_name());
        let row = |name: &str, f: &dyn Fn(&CellStats) -> String| {
            let vals: Vec<String> = cells.iter().map(|c| f(c)).collect();
            format!("| {name} | {} |\n", vals.join(" | "))
        };
        out += &row("Stage", &|c| c.label.clone());
        out += &format!("|---|{}\n", "---|".repeat(cells.len()));
        out += &row("Deployment", &|c| deployment_name(c.deployment).to_owned());
        out += &row("Approaching", &|c| format!("{}/{}", c.approaching, c.trials));
        out += &row("Disassembly", &|c| format!("{}/{}", c.disassembly, c.trials));
        out += &row("Final success", &|c| format!("{}/{}", c.final_success, c.trials));
        out += &row("Recovered", &|c| format!("{}/{}", c.recovered, c.trials));
        out += &row("Mean success time (s)", &|c| {
            c.mean_success_time_s
                .map_or_else(|| "n/a".to_owned(), |t| format!("{t:.1}"))
        });
    }
    out
}

fn csv_text(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &report.cells {
        w.serialize(c).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn render_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(report),
        ReportFormat::Csv => csv_text(report),
    }
}

pub fn parse_csv(text: &str) -> Result<Report, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let cells = r
        .deserialize()
        .collect::<Result<Vec<CellStats>, _>>()
        .map_err(|e| ReportError::Csv(e.to_string()))?;
    Ok(Report { cells })
}

pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::from("| Task | A | B | Final delta (pp) | Time ratio |\n|---|---|---|---|---|\n");
    for d in &c.cells {
        let ratio = d.time_ratio.map_or_else(|| "n/a".to_owned(), |r| format!("{r:.3}"));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:+.1} | {ratio} |",
            d.task.display_name(),
            d.label_a,
            d.label_b,
            d.final_delta_pp
        );
    }
    out
}
