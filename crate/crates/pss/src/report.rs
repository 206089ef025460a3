//! Epochs-to-target and relative training time across several training logs.
//!
//! The first log is the baseline. Its best held-out AUC minus a tolerance
//! is the target every run must reach; relative time multiplies epochs by
//! per-iteration cost and divides by the baseline's product.

use std::fmt::Write as _;

use crate::bench::relative_time;
use crate::error::{Error, Result};
use crate::train::{best_auc, epochs_to_target, LogRow};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub best_auc: f64,
    pub epochs: Option<f64>,
    /// Mean logged `wall_ms_per_kiter`, if the run was timed.
    pub ms_per_kiter: Option<f64>,
    pub relative_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub target_auc: f64,
    pub runs: Vec<RunSummary>,
}

pub fn summarize_runs(runs: &[(String, Vec<LogRow>)], tolerance: f64) -> Result<Report> {
    let Some((_, baseline)) = runs.first() else {
        return Err(Error::InvalidArgument("report needs at least one log".into()));
    };
    let target_auc = best_auc(baseline)
        .ok_or_else(|| Error::InvalidArgument("baseline log has no rows".into()))?
        - tolerance;
    let mut summaries: Vec<RunSummary> = runs
        .iter()
        .map(|(label, log)| {
            let timed: Vec<f64> = log.iter().filter_map(|r| r.wall_ms_per_kiter).collect();
            RunSummary {
                label: label.clone(),
                best_auc: best_auc(log).unwrap_or(f64::NAN),
                epochs: epochs_to_target(log, target_auc),
                ms_per_kiter: (!timed.is_empty()).then(|| timed.iter().sum::<f64>() / timed.len() as f64),
                relative_time: None,
            }
        })
        .collect();
    let (base_epochs, base_ms) = (summaries[0].epochs, summaries[0].ms_per_kiter);
    for s in &mut summaries {
        s.relative_time = match (s.epochs, s.ms_per_kiter, base_epochs, base_ms) {
            (Some(e), Some(m), Some(be), Some(bm)) => relative_time(e, m, be, bm).ok(),
            _ => None,
        };
    }
    Ok(Report { target_auc, runs: summaries })
}

/// One column per run; rows for best AUC, epochs to target, time per 1000
/// iterations and relative time. Missing values print as `-`.
pub fn render(report: &Report) -> String {
    let cell = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.digits$}"));
    let mut rows: Vec<(String, Vec<String>)> = vec![
        ("run".into(), report.runs.iter().map(|r| r.label.clone()).collect()),
        ("best AUC".into(), report.runs.iter().map(|r| cell(Some(r.best_auc), 4)).collect()),
        ("epochs".into(), report.runs.iter().map(|r| cell(r.epochs, 2)).collect()),
        ("ms/kiter".into(), report.runs.iter().map(|r| cell(r.ms_per_kiter, 2)).collect()),
        ("relative time".into(), report.runs.iter().map(|r| cell(r.relative_time, 2)).collect()),
    ];
    let first = rows.iter().map(|(h, _)| h.len()).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..report.runs.len()).map(|c| rows.iter().map(|(_, v)| v[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "target AUC {:.4}", report.target_auc);
    for (head, values) in rows.drain(..) {
        let _ = write!(out, "{head:<first$}");
        for (v, w) in values.iter().zip(&widths) {
            let _ = write!(out, "  {v:>w$}");
        }
        out.push('\n');
    }
    out
}
