use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A network spec failed validation; `index` is the zero-based layer index.
    #[error("layer {index}: {message}")]
    Spec { index: usize, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary or text payload; `offset` is the byte offset where decoding failed.
    #[error("{}: {message} (byte offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: msg.into(),
        }
    }

    /// True for errors caused by files: missing, unreadable or malformed.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}
