use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate transcript id {0:?}")]
    DuplicateId(String),

    /// Network-level failure talking to a backend. Safe to retry.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty driver for transcript {0:?}")]
    EmptyDriver(String),

    #[error("backend failed for {item}: {source}")]
    Job {
        item: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported schema version {found} (supported up to {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("cluster {0} has no label")]
    Unlabeled(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Job { source, .. } => source.is_retryable(),
            _ => false,
        }
    }
}
