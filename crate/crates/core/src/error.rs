use std::path::PathBuf;

use thiserror::Error;

use crate::database::DbKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid user-supplied configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Linear solver breakdown (singular or indefinite system).
    #[error("solver error: {0}")]
    Solver(String),

    /// A numerical procedure failed to produce a finite result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("database kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: DbKind, found: DbKind },

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by inputs rather than by the numerics.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::KindMismatch { .. }
                | Error::Version { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
