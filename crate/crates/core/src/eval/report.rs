use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loso::ModelReport;
use super::stats::{paired_ttest, TTest};
use crate::error::{Error, Result};

/// Paired t-test of per-fold κ between two models on the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: String,
    pub a: String,
    pub b: String,
    pub ttest: Option<TTest>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reports: Vec<ModelReport>,
    pub comparisons: Vec<Comparison>,
}

impl EvalReport {
    pub fn new(reports: Vec<ModelReport>) -> Self {
        let mut comparisons = Vec::new();
        for (i, a) in reports.iter().enumerate() {
            for b in &reports[i + 1..] {
                if a.task != b.task || a.folds.len() != b.folds.len() {
                    continue;
                }
                let ka: Vec<f64> = a.folds.iter().map(|f| f.kappa).collect();
                let kb: Vec<f64> = b.folds.iter().map(|f| f.kappa).collect();
                let (ttest, note) = match paired_ttest(&ka, &kb) {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                comparisons.push(Comparison {
                    task: a.task.clone(),
                    a: a.model.clone(),
                    b: b.model.clone(),
                    ttest,
                    note,
                });
            }
        }
        EvalReport {
            reports,
            comparisons,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!(
                "unknown report format '{s}' (expected text, csv or json)"
            ))),
        }
    }
}

pub fn render(r: &EvalReport, format: ReportFormat) -> Result<String> {
    if r.reports.is_empty() {
        return Err(Error::invalid("report has no models".to_string()));
    }
    match format {
        ReportFormat::Text => Ok(text(r)),
        ReportFormat::Csv => folds_csv(r),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(r)? + "\n"),
    }
}

fn text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<5} {:>17} {:>17} {:>5}",
        "task", "model", "accuracy", "kappa", "folds"
    );
    for m in &r.reports {
        let flagged = m
            .folds
            .iter()
            .filter(|f| f.kappa_degenerate || f.single_class_train)
            .count();
        let _ = write!(
            s,
            "{:<10} {:<5} {:>8.3} ± {:<6.3} {:>8.3} ± {:<6.3} {:>5}",
            m.task,
            m.model,
            m.accuracy.mean,
            m.accuracy.std,
            m.kappa.mean,
            m.kappa.std,
            m.folds.len()
        );
        if flagged > 0 {
            let _ = write!(s, "  ({flagged} degenerate)");
        }
        s.push('\n');
    }
    s.push_str("\npooled confusion, row-normalised (rows: true remembered, true forgotten)\n");
    for m in &r.reports {
        let n = &m.pooled_normalized.rows;
        let _ = writeln!(
            s,
            "{:<10} {:<5} [{:.3} {:.3}; {:.3} {:.3}]  counts [{} {}; {} {}]",
            m.task,
            m.model,
            n[0][0],
            n[0][1],
            n[1][0],
            n[1][1],
            m.pooled.counts[0][0],
            m.pooled.counts[0][1],
            m.pooled.counts[1][0],
            m.pooled.counts[1][1]
        );
    }
    if !r.comparisons.is_empty() {
        s.push_str("\npaired t-test on fold kappa\n");
        for c in &r.comparisons {
            match (&c.ttest, &c.note) {
                (Some(t), _) => {
                    let _ = writeln!(
                        s,
                        "{:<10} {} vs {}: t = {:.3}, df = {}, p = {:.4}",
                        c.task, c.a, c.b, t.t, t.df, t.p
                    );
                }
                (None, note) => {
                    let _ = writeln!(
                        s,
                        "{:<10} {} vs {}: {}",
                        c.task,
                        c.a,
                        c.b,
                        note.as_deref().unwrap_or("not computed")
                    );
                }
            }
        }
    }
    s
}

pub const CSV_HEADER: [&str; 10] = [
    "model", "task", "fold", "subject", "accuracy", "kappa", "tn", "fp", "fn", "tp",
];

/// One line per fold, numbers at 6 decimals.
pub fn folds_csv(r: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for m in &r.reports {
        for f in &m.folds {
            w.write_record([
                m.model.clone(),
                m.task.clone(),
                f.fold.to_string(),
                f.subject.clone(),
                format!("{:.6}", f.accuracy),
                format!("{:.6}", f.kappa),
                f.cm.tn().to_string(),
                f.cm.fp().to_string(),
                f.cm.fn_().to_string(),
                f.cm.tp().to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FoldRow {
    pub model: String,
    pub task: String,
    pub fold: usize,
    pub subject: String,
    pub accuracy: f64,
    pub kappa: f64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

pub fn parse_folds_csv(text: &str) -> Result<Vec<FoldRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| Ok(row?)).collect()
}

#[derive(Serialize)]
struct PooledEntry<'a> {
    model: &'a str,
    task: &'a str,
    counts: [[u64; 2]; 2],
    normalized: [[f64; 2]; 2],
}

/// Pooled 2×2 matrices per model and task, counts and row-normalised.
pub fn pooled_json(r: &EvalReport) -> Result<String> {
    let entries: Vec<PooledEntry> = r
        .reports
        .iter()
        .map(|m| PooledEntry {
            model: &m.model,
            task: &m.task,
            counts: m.pooled.counts,
            normalized: m.pooled_normalized.rows,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&entries)? + "\n")
}
