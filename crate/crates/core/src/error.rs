use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("i/o failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },

    #[error("expected {expected} channels, got {actual}")]
    WrongChannelCount { expected: usize, actual: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inconsistent field: {0}")]
    InconsistentField(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pixel ({row}, {col}) is not covered by any patch")]
    CoverageGap { row: usize, col: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::IoFailure {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
