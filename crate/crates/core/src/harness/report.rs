//! Report rows and their CSV / JSON emission.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// One transfer-matrix cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub surrogate: String,
    pub victim: String,
    pub attack: String,
    pub loss: String,
    pub mode: String,
    pub n_blocks: usize,
    pub m_partitions: usize,
    pub epsilon: f64,
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

/// Victim name used for the across-victims average row.
pub const AVG_VICTIM: &str = "AVG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<TransferRow>,
}

impl TransferReport {
    /// Rows for one (surrogate, victim, loss, n_blocks) cell, if present.
    pub fn find(&self, surrogate: &str, victim: &str, loss: &str, n_blocks: usize) -> Option<&TransferRow> {
        self.rows.iter().find(|r| {
            r.surrogate == surrogate && r.victim == victim && r.loss == loss && r.n_blocks == n_blocks
        })
    }
}

/// One data-free UAP cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UapRow {
    pub surrogate: String,
    pub target: usize,
    pub attack: String,
    pub loss: String,
    pub n_blocks: usize,
    pub m_partitions: usize,
    pub epsilon: f64,
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UapReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<UapRow>,
}

impl UapReport {
    /// Mean success rate over targets for a surrogate and block count.
    pub fn mean_rate(&self, surrogate: &str, n_blocks: usize) -> Option<f64> {
        let rates: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.surrogate == surrogate && r.n_blocks == n_blocks)
            .map(|r| r.rate)
            .collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

/// One point of an ablation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub surrogate: String,
    pub param: String,
    pub value: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub seed: u64,
    pub points: Vec<AblationPoint>,
    pub skipped: Vec<String>,
}

/// Two-column curve row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: usize,
    pub rate: f64,
}

impl AblationReport {
    pub fn curve(&self, surrogate: &str) -> Vec<CurvePoint> {
        self.points
            .iter()
            .filter(|p| p.surrogate == surrogate)
            .map(|p| CurvePoint {
                value: p.value,
                rate: p.rate,
            })
            .collect()
    }

    pub fn rate(&self, surrogate: &str, value: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.surrogate == surrogate && p.value == value)
            .map(|p| p.rate)
    }
}

/// Per-image record of an attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub source: String,
    pub output: String,
    pub original: usize,
    pub target: usize,
    pub surrogate_success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub surrogate: String,
    pub seed: u64,
    pub config_hash: String,
    pub epsilon: f64,
    pub images: Vec<ManifestEntry>,
}

/// Writes rows as CSV (header always present) or as a JSON array.
pub fn emit_rows<T: Serialize>(rows: &[T], header: &[&str], format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut wtr = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)?;
            wtr.write_record(header)?;
            for r in rows {
                wtr.serialize(r)?;
            }
            wtr.flush().map_err(|e| Error::io(path, e))?;
        }
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(rows)?;
            fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(format: ReportFormat, path: &Path) -> Result<Vec<T>> {
    match format {
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_path(path)?;
            rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
        }
        ReportFormat::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

pub const TRANSFER_COLUMNS: &[&str] = &[
    "surrogate",
    "victim",
    "attack",
    "loss",
    "mode",
    "n_blocks",
    "m_partitions",
    "epsilon",
    "successes",
    "total",
    "rate",
];

pub const UAP_COLUMNS: &[&str] = &[
    "surrogate",
    "target",
    "attack",
    "loss",
    "n_blocks",
    "m_partitions",
    "epsilon",
    "successes",
    "total",
    "rate",
];

pub const COVERAGE_COLUMNS: &[&str] = &["victim", "variant", "mean_c", "n_images", "n_excluded"];
pub const ABLATION_COLUMNS: &[&str] = &["surrogate", "param", "value", "rate"];
pub const CURVE_COLUMNS: &[&str] = &["value", "rate"];

pub fn emit_report(report: &TransferReport, format: ReportFormat, path: &Path) -> Result<()> {
    emit_rows(&report.rows, TRANSFER_COLUMNS, format, path)
}

/// Rate as a one-decimal percentage for console output.
pub struct Percent(pub f64);

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}%", self.0 * 100.0)
    }
}

/// Console table of victim-averaged rates, one line per (surrogate, loss).
pub fn summarize_transfer(report: &TransferReport) -> String {
    let mut out = String::new();
    for r in report.rows.iter().filter(|r| r.victim == AVG_VICTIM) {
        out.push_str(&format!(
            "{:<10} {:<8} {:<12} N={:<2} M={:<2} avg transfer {}\n",
            r.surrogate,
            r.loss,
            r.attack,
            r.n_blocks,
            r.m_partitions,
            Percent(r.rate)
        ));
    }
    out
}
