//! Per-epoch metrics lines and the JSON run report.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::TrainingConfig;

pub const REPORT_SCHEMA: u32 = 1;

/// One validation pass, written as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u32,
    /// Global step count after the epoch.
    pub t: u64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Refresh round trips so far.
    pub refresh_count: u64,
    /// Milliseconds since training started.
    pub wall_ms: u64,
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(|e| Error::Config(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Config(format!("metrics line {}: {e}", i + 1))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub dim: usize,
    pub classes: usize,
}

/// Cleartext comparator run under the same configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub softmax: String,
    pub test_accuracy: f64,
    pub wall_ms: u64,
    /// Max absolute difference between the two final weight matrices.
    pub max_weight_divergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// `local`, `cloud` or `plain`.
    pub mode: String,
    pub config: TrainingConfig,
    pub dataset: DatasetSummary,
    pub epochs: Vec<MetricsRecord>,
    /// Accuracy of the decrypted model on the cleartext test split.
    pub final_test_accuracy: f64,
    /// Accuracy of encrypted inference on the test split, if run.
    pub encrypted_infer_accuracy: Option<f64>,
    pub training_wall_ms: u64,
    pub refresh_count: u64,
    /// Bytes exchanged by refresh requests and responses.
    pub refresh_bytes: u64,
    pub oracle: Option<OracleComparison>,
}

impl RunReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        super::formats::write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if r.schema_version != REPORT_SCHEMA {
            return Err(Error::Config(format!(
                "{}: report schema {} is not {REPORT_SCHEMA}",
                path.display(),
                r.schema_version
            )));
        }
        Ok(r)
    }
}
