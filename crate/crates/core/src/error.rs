use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiskError {
    #[error("empty input")]
    EmptyInput,
    #[error("cannot classify equation token {0:?}")]
    UnknownKind(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("refusing to overwrite existing file {0} (pass --force)")]
    RefuseOverwrite(PathBuf),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch}: non-finite loss (last good checkpoint: epoch {last_good})")]
    Diverged { epoch: usize, last_good: usize },
    #[error("external metric {name} failed: {msg}")]
    ExternalMetric { name: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DiskError> = std::result::Result<T, E>;
