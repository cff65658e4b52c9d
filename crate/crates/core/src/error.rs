use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {value} at {location}")]
    NonFinite { location: String, value: f64 },

    #[error("config field `{field}` {reason}")]
    Validation { field: String, reason: String },

    #[error("weight store: missing tensor `{0}`")]
    MissingTensor(String),

    #[error("weight store: tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight store: blob truncated, manifest needs {expected} bytes but blob has {found}")]
    TruncatedBlob { expected: usize, found: usize },

    #[error("weight store: tensor `{name}` at offset {offset} overlaps or leaves a gap (expected offset {expected})")]
    BadOffset {
        name: String,
        offset: usize,
        expected: usize,
    },

    #[error("weight store manifest: {0}")]
    Manifest(String),

    #[error("image format: {0}")]
    ImageFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem or a malformed file on disk.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::ImageFormat(_) | Error::TruncatedBlob { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
