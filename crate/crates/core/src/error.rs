use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across dataset loading, training, evaluation and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} is empty")]
    EmptyFile(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("id out of range: {what} {id} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        id: usize,
        limit: usize,
    },

    #[error("incompatible configuration: {0}")]
    IncompatibleConfig(String),

    #[error("non-finite gradient in {block} row {row}")]
    NonFiniteGradient { block: &'static str, row: usize },

    #[error("no validation positives available; disable early stopping (patience = none)")]
    NoValidationTargets,

    #[error("no users with target positives to evaluate")]
    NothingToEvaluate,

    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLengthMismatch { expected: u64, found: u64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("grid is empty after compatibility pruning")]
    EmptyGrid,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
