use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ConfigSources, RunConfig};
use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::mltp::MltpStop;
use crate::nn::ModelSpec;

pub const CSV_HEADER: &str = "epoch,wall_seconds,train_loss,test_accuracy,lr,recipe";

/// One evaluation point. Epoch 0 is the untrained model and carries no
/// training loss (`NaN`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub wall_seconds: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub lr: f64,
    pub recipe: String,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.epoch, self.wall_seconds, self.train_loss, self.test_accuracy, self.lr, self.recipe
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if f.len() != 6 {
            return Err(Error::Data(format!("metrics row has {} fields: `{line}`", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Data(format!("bad number `{s}` in `{line}`")))
        };
        Ok(MetricsRecord {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad epoch in `{line}`")))?,
            wall_seconds: num(f[1])?,
            train_loss: num(f[2])?,
            test_accuracy: num(f[3])?,
            lr: num(f[4])?,
            recipe: f[5].to_string(),
        })
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Data(format!("{} lacks the metrics header", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRecord::parse_row).collect()
}

/// `metrics.csv` → `metrics.manifest.json`.
pub fn manifest_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("manifest.json")
}

/// `metrics.csv` → `metrics.model.bin`.
pub fn checkpoint_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("model.bin")
}

/// `metrics.csv` → `metrics.mltp.csv`.
pub fn history_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("mltp.csv")
}

/// Creates the metrics file (header only) so an unwritable destination fails
/// before any work is done.
pub fn preflight(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
    }
    fs::write(path, metrics_csv(&[])).map_err(|e| Error::at_path(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub subset: u64,
    pub test_subset: u64,
    pub model: u64,
    pub augmentation: u64,
    pub whitening: u64,
    pub tasks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningSummary {
    pub fit_digest: String,
    pub filters_digest: String,
    pub eps: f64,
    pub patches: usize,
    pub eigvals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Budget,
    Mltp(MltpStop),
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub recipe: String,
    pub config: RunConfig,
    pub sources: ConfigSources,
    pub seeds: Seeds,
    pub train_source_digest: String,
    pub test_source_digest: String,
    pub subset_digest: String,
    pub test_subset_digest: String,
    pub train_size: usize,
    pub test_size: usize,
    pub channel_stats: ChannelStats,
    pub whitening: Option<WhiteningSummary>,
    pub model_spec: ModelSpec,
    pub parameter_count: usize,
    pub label_smoothing: f64,
    pub weight_decay: f64,
    pub initial_weights_digest: String,
    pub initial_accuracy: f64,
    pub initial_eval_seconds: f64,
    pub epochs_completed: usize,
    pub stop_reason: StopReason,
    pub total_seconds: f64,
    pub final_accuracy: f64,
    pub checkpoint: Option<PathBuf>,
    pub mltp_history: Option<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the CSV at `path` and the manifest next to it.
pub fn write_metrics(records: &[MetricsRecord], manifest: Option<&Manifest>, path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(records)).map_err(|e| Error::at_path(path, e))?;
    if let Some(m) = manifest {
        let mp = manifest_path(path);
        let mut text = serde_json::to_string_pretty(m)?;
        text.push('\n');
        fs::write(&mp, text).map_err(|e| Error::at_path(&mp, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, loss: f64) -> MetricsRecord {
        MetricsRecord {
            epoch,
            wall_seconds: 1.25 * epoch as f64,
            train_loss: loss,
            test_accuracy: 42.5,
            lr: 0.125,
            recipe: "sam+ip".into(),
        }
    }

    #[test]
    fn header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[], None, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(read_metrics(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let records = vec![rec(1, 2.5), rec(2, 1.75)];
        write_metrics(&records, None, &p).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), records);
        assert!(fs::read_to_string(&p)
            .unwrap()
            .contains("\n1,1.250000,2.500000,42.500000,0.125000,sam+ip\n"));
    }

    #[test]
    fn nan_loss_survives() {
        let r = MetricsRecord::parse_row(&rec(0, f64::NAN).csv_row()).unwrap();
        assert!(r.train_loss.is_nan());
    }

    #[test]
    fn unwritable_path_fails_preflight() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        assert!(matches!(preflight(&blocker.join("m.csv")), Err(Error::Path { .. })));
    }

    #[test]
    fn sibling_paths() {
        let p = Path::new("out/run.csv");
        assert_eq!(manifest_path(p), Path::new("out/run.manifest.json"));
        assert_eq!(checkpoint_path(p), Path::new("out/run.model.bin"));
        assert_eq!(history_path(p), Path::new("out/run.mltp.csv"));
    }
}
