use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or unreadable wav: {0}")]
    Wav(String),

    #[error("zero-length audio")]
    ZeroLength,

    #[error("clip too short: {samples} samples, need at least {required}")]
    ClipTooShort { samples: usize, required: usize },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("already exists: {0}")]
    AlreadyExists(PathBuf),

    #[error("report error: {0}")]
    Report(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
