//! NMSE result tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub smnr_db: f64,
    pub n_train: usize,
    pub nmse_db_mean: f64,
    pub nmse_db_stderr: f64,
    pub n_test: usize,
}

/// A cell that could not be evaluated, typically a diverged training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedCell {
    pub method: String,
    pub smnr_db: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailedCell>,
}

impl ResultTable {
    pub fn get(&self, method: &str, smnr_db: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.smnr_db == smnr_db)
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// CSV with one row per evaluated cell; failed cells follow as `#`
    /// comment lines.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record(["method", "smnr_db", "n_train", "nmse_db_mean", "nmse_db_stderr", "n_test"])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        let mut out = String::from_utf8(w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        for f in &self.failures {
            let reason = f.reason.replace(['\n', '\r'], " ");
            out.push_str(&format!("# failed,{},{},{}\n", f.method, f.smnr_db, reason));
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# failed,") {
                let mut parts = rest.splitn(3, ',');
                let (Some(method), Some(smnr), Some(reason)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::Parse(format!("malformed failure line {line:?}")));
                };
                let smnr_db = smnr.parse().map_err(|_| Error::Parse(format!("bad SMNR in {line:?}")))?;
                failures.push(FailedCell { method: method.into(), smnr_db, reason: reason.into() });
            }
        }
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        for rec in reader.deserialize() {
            let row: ResultRow = rec.map_err(|e| Error::Parse(format!("result table: {e}")))?;
            rows.push(row);
        }
        Ok(Self { rows, failures })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::io::write_file(path, self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&super::io::read_text(path)?)
    }
}
