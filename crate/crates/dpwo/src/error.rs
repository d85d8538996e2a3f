//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by workload I/O, the numerical kernels, the solver, and
/// the mechanisms.
#[derive(Debug, Error)]
pub enum Error {
    /// Parse or validation failure while reading a workload or histogram.
    #[error("load error: {0}")]
    Load(String),

    /// A parameter or input violates an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical kernel failed (non-convergence, near-singular input, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
