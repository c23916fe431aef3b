use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stale forward context for `{0}`: parameters changed since the forward pass")]
    StaleContext(String),

    #[error("fragment is not deterministic: loss {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("transfer plan: {0}")]
    Plan(String),

    #[error("dataset {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("training diverged at {context}: {detail}")]
    Diverged { context: String, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dataset(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Config { .. } => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::StaleContext(_) => "stale_context",
            Error::NonDeterministic { .. } => "non_deterministic",
            Error::Checkpoint(_) => "checkpoint",
            Error::Plan(_) => "plan",
            Error::Dataset { .. } => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
        }
    }
}
