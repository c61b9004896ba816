use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt image data: {0}")]
    CorruptImage(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("expected an image with an alpha channel, got {0}")]
    NotRgba(String),

    #[error(
        "legacy cascade format (root `{0}`) is not supported; convert it to the \
         current cascade XML dialect first (e.g. with OpenCV's traincascade tools)"
    )]
    LegacyCascade(String),

    #[error("malformed cascade model: {0}")]
    MalformedCascade(String),

    #[error("weak classifier references feature {index} but the table has {len} features")]
    DanglingFeature { index: usize, len: usize },

    #[error("unsupported cascade feature: {0}")]
    UnsupportedCascade(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no face detected in the baseline image")]
    NoFaceInBaseline,

    #[error("region `{0}` covers no pixels of the face box")]
    EmptyRegion(String),

    #[error(transparent)]
    Remote(#[from] RemoteError),

    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failures of the remote detector client. Only `Timeout` and 5xx
/// `Status` responses are retried.
#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },

    #[error("could not parse provider response: {0}")]
    Parse(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("encoded image is {size} bytes, over the {limit} byte limit")]
    PayloadTooLarge { size: usize, limit: usize },

    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
}

impl RemoteError {
    pub fn is_retryable(&self) -> bool {
        match self {
            RemoteError::Timeout(_) => true,
            RemoteError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}
