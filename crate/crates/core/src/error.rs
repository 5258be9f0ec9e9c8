use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("corpus not found at {0}")]
    CorpusNotFound(PathBuf),
    #[error("audio format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("unknown keyword {0:?}")]
    UnknownKeyword(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid sample at index {index}: {value}")]
    InvalidSample { index: usize, value: f64 },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stale forward trace: {0}")]
    Trace(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("non-finite gradient at parameter {index} ({value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("invalid noise: {0}")]
    InvalidNoise(String),
    #[error("undefined gain: {0}")]
    UndefinedGain(String),
    #[error("incompatible run logs: {0}")]
    IncompatibleLogs(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
