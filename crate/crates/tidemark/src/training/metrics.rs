//! Line-delimited JSON metrics log: one record per training step carrying
//! every loss scalar, the learning rate, pre-clip gradient norms, and the
//! codec condition sampled for the step.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss_disc: f64,
    pub loss_adv: f64,
    pub loss_fm: f64,
    pub loss_mel: f64,
    pub loss_wm: f64,
    pub loss_gen_total: f64,
    pub grad_norm_gen: f64,
    pub grad_norm_disc: f64,
    pub grad_norm_wm: f64,
    pub lr: f64,
    /// Label of the codec spec sampled for this step, e.g. `"none"` or
    /// `"mp3@64"`.
    pub codec: String,
}

/// Append-only writer for a JSONL metrics file.
pub struct MetricsWriter {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Open for appending, creating the file if needed.
    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            file: std::io::BufWriter::new(file),
            path: path.into(),
        })
    }

    /// Truncate any existing file and start fresh.
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            file: std::io::BufWriter::new(file),
            path: path.into(),
        })
    }

    pub fn append(&mut self, record: &StepMetrics) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Invalid(format!("metrics serialization: {e}")))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Read every record from a JSONL metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::Invalid(format!("metrics line {} in {}: {e}", i + 1, path.display()))
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(step: u64) -> StepMetrics {
        StepMetrics {
            step,
            epoch: 0,
            loss_disc: 0.5,
            loss_adv: 1.0,
            loss_fm: 0.25,
            loss_mel: 3.75,
            loss_wm: 1.0 / 3.0,
            loss_gen_total: 1.0 + 2.0 * 0.25 + 45.0 * 3.75 + 1.0 / 3.0,
            grad_norm_gen: 1.25,
            grad_norm_disc: 0.5,
            grad_norm_wm: 2.5,
            lr: 2e-4,
            codec: "mp3@64".into(),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        let records = vec![sample(0), sample(1)];
        for r in &records {
            w.append(r).unwrap();
        }
        drop(w);
        let back = read_metrics(&path).unwrap();
        assert_eq!(back, records);
        // Third including an awkward float: 1/3 must survive the text form.
        assert_eq!(back[0].loss_wm.to_bits(), (1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn append_extends_an_existing_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        MetricsWriter::create(&path).unwrap().append(&sample(0)).unwrap();
        MetricsWriter::open(&path).unwrap().append(&sample(1)).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].step, 1);
    }
}
