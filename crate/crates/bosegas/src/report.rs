//! Experiment output: JSON-lines documents with a versioned header and
//! RFC-4180 CSV tables. For a fixed configuration the body lines are
//! bitwise reproducible; only the header timestamp varies between runs.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;

/// One summary statistic row of the common output schema.
#[derive(Debug, Clone, Serialize)]
pub struct StatRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bc: Option<String>,
    pub stat: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
}

impl StatRecord {
    pub fn new(stat: impl Into<String>, value: f64) -> Self {
        StatRecord {
            n: None,
            l: None,
            bc: None,
            stat: stat.into(),
            value,
            stderr: None,
            samples: None,
        }
    }

    pub fn with_n(mut self, n: u64) -> Self {
        self.n = Some(n);
        self
    }

    pub fn with_l(mut self, l: f64) -> Self {
        self.l = Some(l);
        self
    }

    pub fn with_bc(mut self, bc: impl Into<String>) -> Self {
        self.bc = Some(bc.into());
        self
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }

    pub fn with_samples(mut self, samples: u64) -> Self {
        self.samples = Some(samples);
        self
    }
}

/// A JSON-lines document built in memory: a header object followed by one
/// object per line. Keys are emitted in sorted order, so the body is
/// reproducible for fixed input.
#[derive(Debug, Clone)]
pub struct JsonLinesReport {
    lines: Vec<String>,
}

impl JsonLinesReport {
    pub fn new(experiment: &str, seed: u64, timestamp_epoch_s: u64) -> Self {
        let header = json!({
            "schema": 1,
            "experiment": experiment,
            "seed": seed,
            "timestamp": timestamp_epoch_s,
        });
        JsonLinesReport {
            lines: vec![header.to_string()],
        }
    }

    pub fn push_value(&mut self, value: &Value) {
        self.lines.push(value.to_string());
    }

    pub fn push_record(&mut self, record: &StatRecord) {
        let value = serde_json::to_value(record).expect("statistics serialize");
        self.lines.push(value.to_string());
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for line in &self.lines {
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// FNV-1a hash of the body (header excluded), for determinism checks.
    pub fn body_digest(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        for line in self.lines.iter().skip(1) {
            for byte in line.bytes().chain(std::iter::once(b'\n')) {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }
}

/// Writes serializable rows as CSV with a header row derived from the field
/// names (RFC-4180 quoting).
pub fn write_csv_records<W: Write, S: Serialize>(w: W, rows: &[S]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| crate::error::Error::Config(format!("CSV serialization: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| crate::error::Error::Config(format!("CSV flush: {e}")))?;
    Ok(())
}

/// Writes (r, value) pairs as a two-column CSV with the given column names.
pub fn write_csv_pairs<W: Write>(
    w: W,
    columns: (&str, &str),
    pairs: &[(f64, f64)],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer
        .write_record([columns.0, columns.1])
        .map_err(|e| crate::error::Error::Config(format!("CSV header: {e}")))?;
    for &(a, b) in pairs {
        writer
            .write_record([format!("{a}"), format!("{b}")])
            .map_err(|e| crate::error::Error::Config(format!("CSV row: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| crate::error::Error::Config(format!("CSV flush: {e}")))?;
    Ok(())
}
