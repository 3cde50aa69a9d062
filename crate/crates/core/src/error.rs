use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("feature count mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("labels must be binary (0/1), found {0} at row {1}")]
    NonBinaryLabel(f64, usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("index {index} out of range for {len} training rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("ensemble shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("model carries no training trace")]
    MissingTrace,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
