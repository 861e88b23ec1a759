//! Per-epoch metrics records and the JSON-lines files they live in.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{LspError, Result};

/// One line of `metrics.jsonl`. Field order is the column order of the
/// exported CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub mode: String,
    pub mean_solver_reward: f64,
    pub mean_quality: f64,
    pub mean_challenger_score: f64,
    pub loss_total: f64,
    pub loss_solver_pg: f64,
    pub loss_solver_kl: f64,
    pub loss_challenger_pg: f64,
    pub loss_challenger_kl: f64,
    pub kl_mean: f64,
    pub wellformed_rate: f64,
    pub wall_ms: u64,
}

pub const METRIC_COLUMNS: [&str; 13] = [
    "epoch",
    "mode",
    "mean_solver_reward",
    "mean_quality",
    "mean_challenger_score",
    "loss_total",
    "loss_solver_pg",
    "loss_solver_kl",
    "loss_challenger_pg",
    "loss_challenger_kl",
    "kl_mean",
    "wellformed_rate",
    "wall_ms",
];

/// One line of `eval.jsonl`: mean task reward on the held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: u64,
    pub heldout_reward: f64,
}

/// One line of `failures.jsonl`: an epoch whose update was rolled back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub epoch: u64,
    pub error: String,
}

/// Append-only JSON-lines writer.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| LspError::io(path, e))?;
        Ok(JsonlSink {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| LspError::format(&self.path, e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| LspError::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| LspError::io(&self.path, e))
    }
}

/// Reads every record of a JSON-lines file, failing on the first bad line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| LspError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| LspError::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}
