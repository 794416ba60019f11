//! Side-by-side tables of several runs.

use std::fmt::Write as _;

use driftguard_core::strategies::StrategyKind;
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::runner::RunReport;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: StrategyKind,
    pub seconds: f64,
    /// `seconds / baseline seconds`.
    pub time_ratio: f64,
    pub accuracy: f64,
    pub bwt: f64,
    pub remembering: f64,
    pub positive_bwt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    /// The naive run when one is present, otherwise the first report.
    pub baseline: StrategyKind,
    pub rows: Vec<ComparisonRow>,
}

/// Training time and metrics of each report relative to the naive run.
pub fn timing_report(reports: &[RunReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(HarnessError::Report("a comparison needs at least two runs".into()));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.benchmark != first.benchmark || r.n_tasks != first.n_tasks {
            return Err(HarnessError::Report(format!(
                "cannot compare {} with {} tasks against {} with {} tasks",
                r.benchmark.name(),
                r.n_tasks,
                first.benchmark.name(),
                first.n_tasks
            )));
        }
    }
    let base = reports
        .iter()
        .find(|r| r.strategy == StrategyKind::Naive)
        .unwrap_or(first);
    if base.strategy != StrategyKind::Naive {
        log::warn!("no naive run to compare against; times are relative to {}", base.strategy.name());
    }
    Ok(ComparisonTable {
        baseline: base.strategy,
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                strategy: r.strategy,
                seconds: r.seconds,
                time_ratio: r.seconds / base.seconds,
                accuracy: r.accuracy,
                bwt: r.bwt,
                remembering: r.remembering,
                positive_bwt: r.positive_bwt,
            })
            .collect(),
    })
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<11} {:>9} {:>7} {:>9} {:>8} {:>11} {:>9}\n",
            "strategy",
            "seconds",
            format!("x{}", self.baseline.name()),
            "accuracy",
            "bwt",
            "remembering",
            "pos_bwt"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<11} {:>9.2} {:>7.2} {:>9.4} {:>8.4} {:>11.4} {:>9.4}",
                r.strategy.name(),
                r.seconds,
                r.time_ratio,
                r.accuracy,
                r.bwt,
                r.remembering,
                r.positive_bwt
            );
        }
        s
    }
}
