use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library.
///
/// `Invalid*`, `Parse` and `NotFound` variants are caller mistakes; the rest
/// are numerical or I/O failures at run time.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidInput(String),

    #[error("{what} not found: {path}")]
    NotFound { what: &'static str, path: PathBuf },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),

    #[error("eigendecomposition failed to converge")]
    EigenNoConvergence,

    #[error("non-finite objective at iteration {iteration}; trace so far: {detail}")]
    NonFiniteObjective { iteration: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error stems from bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::NotFound { .. }
                | Error::Parse { .. }
                | Error::InvalidHyperparams(_)
                | Error::Json(_)
        )
    }
}
