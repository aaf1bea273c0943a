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

    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("invalid segment [{start}, {end}]: {reason}")]
    InvalidSegment { start: f64, end: f64, reason: &'static str },

    #[error("video {video_id}: {message}")]
    Video { video_id: String, message: String },

    #[error("taxonomy: {0}")]
    Taxonomy(String),

    #[error("split: {0}")]
    Split(String),

    #[error("label {0:?} is not in the vocabulary")]
    UnknownLabel(String),

    #[error("feature file: bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("feature file: unsupported version {0}")]
    Version(u32),

    #[error("feature file: truncated payload, expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(what: &'static str, err: serde_json::Error) -> Self {
        Error::Parse { what, message: err.to_string() }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
