use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LspError>;

#[derive(Debug, Error)]
pub enum LspError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("numerical failure in epoch {epoch}: {detail}")]
    EpochFailed { epoch: u64, detail: String },

    #[error("oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LspError {
    /// Short stable tag used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            LspError::Config(_) => "config",
            LspError::Usage(_) => "usage",
            LspError::NonFinite { .. } => "non_finite",
            LspError::EpochFailed { .. } => "epoch_failed",
            LspError::OracleInvalid(_) => "oracle_invalid",
            LspError::ArchitectureMismatch(_) => "architecture_mismatch",
            LspError::Format { .. } => "format",
            LspError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LspError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        LspError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
