use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("empty audio: {0}")]
    EmptyAudio(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed archive: {0}")]
    MalformedArchive(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("invalid corpus: {0}")]
    Corpus(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("solver did not converge after {iterations} iterations (max violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
