use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub k: usize,
    pub distance: f64,
    pub bound: f64,
    /// `distance / bound`, absent when the bound is zero.
    pub ratio: Option<f64>,
    pub pass: bool,
}

impl ReportRow {
    pub fn new(k: usize, distance: f64, bound: f64, pass: bool) -> Self {
        let ratio = (bound > 0.0).then(|| distance / bound);
        Self { k, distance, bound, ratio, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config: ExperimentConfig,
    pub crate_version: String,
    pub wall_time_seconds: f64,
    pub threads: usize,
    /// Scalar diagnostics (truncation error, worst residuals, ...).
    pub diagnostics: BTreeMap<String, f64>,
    /// Extra per-step columns, each aligned with `rows`.
    pub series: BTreeMap<String, Vec<f64>>,
    /// Free-form table, one map per entry (used by the rate sweep).
    pub table: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with columns `k,distance,bound,ratio,pass`, or the full report as
/// JSON. An absent ratio is an empty CSV field.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record(["k", "distance", "bound", "ratio", "pass"]).map_err(csv_err)?;
            for r in &report.rows {
                let ratio = r.ratio.map(fmt_num).unwrap_or_default();
                w.write_record([
                    r.k.to_string(),
                    fmt_num(r.distance),
                    fmt_num(r.bound),
                    ratio,
                    r.pass.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, report)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("csv: {other:?}"))),
    }
}
