//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by rate computations.
///
/// The variants map onto the CLI exit-code contract: domain/configuration
/// problems, numerical failures (non-PSD matrices, degenerate denominators),
/// and iterative-solver non-convergence.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: out-of-range parameter, dimension mismatch, bad file.
    #[error("domain error: {0}")]
    Domain(String),

    /// Numerical failure: factorization breakdown, PSD violation, degenerate
    /// denominator.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("convergence error: {0}")]
    Convergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
    pub fn convergence(msg: impl Into<String>) -> Self {
        Error::Convergence(msg.into())
    }
}
