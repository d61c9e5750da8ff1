//! Error type shared across the library.
//!
//! Variants split along the boundary callers care about: problems with input
//! data (bad files, unknown ids, empty corpora) versus numerical failures
//! (non-finite values, degenerate geometry, diverging training). The CLI maps
//! the former to exit code 2 and the latter to exit code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or inconsistent data: bad magic, wrong arity, duplicate ids,
    /// truncated payloads. The message names the offending file/line/field.
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown id {id:?} in {what}")]
    MissingId { what: String, id: String },

    #[error("empty input: {0}")]
    Empty(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Inputs that are structurally valid but numerically unusable,
    /// e.g. a zero-norm vector fed to cosine similarity.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Numerical failures during training or checking: diverging loss,
    /// NaN validation metric, failed gradient check.
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors the CLI reports as numerical failures (exit code 3)
    /// rather than data errors (exit code 2).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Degenerate(_) | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
