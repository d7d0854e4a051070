use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation, triggering and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver did not converge after {iterations} iterations ({what})")]
    SolverFailure {
        what: &'static str,
        iterations: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad user input (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
