//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File contents do not match the expected layout.
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// A value or combination of values violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A detection could not be turned into a 3D box.
    #[error("box recovery failed: {0}")]
    Recovery(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
