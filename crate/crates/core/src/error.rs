use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path} at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("image decode failed for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(
        "dimension mismatch: annotation declares {ann_width}x{ann_height} but image is {img_width}x{img_height}"
    )]
    DimensionMismatch {
        ann_width: usize,
        ann_height: usize,
        img_width: usize,
        img_height: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("scene {0} has no annotations")]
    EmptyScene(String),

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("{what} must be positive, got {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("resampled grid {width}x{height} exceeds the pixel budget of {budget}")]
    PixelBudget {
        width: usize,
        height: usize,
        budget: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient on scene {0}")]
    NonFiniteGradient(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
