use std::path::Path;

use crate::trainer::{MetricsRecord, METRIC_COLUMNS};
use crate::{LspError, Result};

/// A metrics line that could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct LineWarning {
    /// 1-based line number in the metrics log.
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveExport {
    pub rows: Vec<MetricsRecord>,
    pub warnings: Vec<LineWarning>,
}

/// Converts a metrics log into a CSV with one row per parseable line and the
/// columns of [`METRIC_COLUMNS`]. Bad lines are skipped and reported.
pub fn export_curves(metrics: &Path, csv_out: &Path) -> Result<CurveExport> {
    let text = std::fs::read_to_string(metrics).map_err(|e| LspError::io(metrics, e))?;
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(line) {
            Ok(r) => rows.push(r),
            Err(e) => warnings.push(LineWarning {
                line: i + 1,
                detail: e.to_string(),
            }),
        }
    }
    let csv_err = |e: csv::Error| LspError::format(csv_out, e.to_string());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(csv_out)
        .map_err(csv_err)?;
    w.write_record(METRIC_COLUMNS).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| LspError::io(csv_out, e))?;
    Ok(CurveExport { rows, warnings })
}
