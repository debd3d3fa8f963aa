//! CSV and checkpoint writing for experiment artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use surrogate_core::lossnet::{save_checkpoint, LossNetWeights};
use surrogate_core::trainer::TrainLog;

use crate::error::{HarnessError, Result};

/// Formats a value for a CSV cell; NaN and infinities abort the run.
pub fn num(what: &str, v: f64) -> Result<String> {
    if v.is_finite() {
        Ok(v.to_string())
    } else {
        Err(HarnessError::Verification(format!(
            "non-finite {what}: {v}"
        )))
    }
}

/// Rows of string cells under a header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| HarnessError::Verification(format!("csv encoding: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| HarnessError::Verification(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv()?)
    }

    /// Column by header name, parsed as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn write_log(path: &Path, log: &TrainLog, timing: bool) -> Result<()> {
    let log = if timing {
        log.clone()
    } else {
        log.without_timing()
    };
    for r in log.rows() {
        for (what, v) in [
            ("objective", r.objective),
            ("spearman_soft", r.spearman_soft),
            ("spearman_hard", r.spearman_hard),
            ("penalty_mean", r.penalty_mean),
        ] {
            num(what, v)?;
        }
    }
    write_text(path, &log.to_csv())
}

pub fn write_checkpoint(path: &Path, w: &LossNetWeights) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    Ok(save_checkpoint(w, path)?)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}
