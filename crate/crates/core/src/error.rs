use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network spec at layer {index}: {reason}")]
    Spec { index: usize, reason: String },

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("unknown layer kind `{0}`")]
    UnknownLayer(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("image error in {}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn io_path(path: &Path, source: io::Error) -> Self {
        Error::io(path.display().to_string(), source)
    }

    pub(crate) fn image(path: &Path, reason: impl ToString) -> Self {
        Error::Image {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec { .. } => 1,
            Error::Data(_)
            | Error::Image { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Truncated(_)
            | Error::UnknownLayer(_) => 2,
            Error::Shape(_) | Error::State(_) | Error::NonFinite(_) | Error::Json(_) => 3,
        }
    }
}
