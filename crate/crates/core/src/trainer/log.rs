use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub objective: f64,
    pub spearman_soft: f64,
    pub spearman_hard: f64,
    pub penalty_mean: f64,
    pub elapsed_ms: u64,
}

/// Append-only per-step training record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    rows: Vec<LogRow>,
}

pub const TRAIN_LOG_HEADER: &str =
    "step,objective,spearman_soft,spearman_hard,penalty_mean,elapsed_ms";

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(CoreError::invalid(format!(
                    "log step {} does not follow {}",
                    row.step, last.step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// Mean of `f` over the last `window` rows (fewer if the log is short).
    pub fn trailing_mean(&self, window: usize, f: impl Fn(&LogRow) -> f64) -> Option<f64> {
        let k = window.min(self.rows.len());
        if k == 0 {
            return None;
        }
        Some(self.rows[self.rows.len() - k..].iter().map(f).sum::<f64>() / k as f64)
    }

    /// Same rows with `elapsed_ms` zeroed, for byte-stable output.
    pub fn without_timing(&self) -> TrainLog {
        TrainLog {
            rows: self
                .rows
                .iter()
                .map(|r| LogRow {
                    elapsed_ms: 0,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step, r.objective, r.spearman_soft, r.spearman_hard, r.penalty_mean, r.elapsed_ms
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| CoreError::io(path, e))
    }
}
