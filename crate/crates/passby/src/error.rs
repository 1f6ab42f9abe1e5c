//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the passby library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An I/O operation failed; the path gives context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse.
    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: PathBuf,
        /// Line number for text files, byte offset for binary ones.
        location: String,
        message: String,
    },

    /// A WAV file uses an encoding this crate does not read.
    #[error("unsupported format in {path}: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn unsupported(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::UnsupportedFormat {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
