//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (bad probability, size mismatch
    /// between a graph and a permutation, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced or received non-finite values, or a numeric
    /// routine failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A randomized generator exhausted its retry budget.
    #[error("generation failed: {0}")]
    Generation(String),

    /// A quadratic form or moment matrix is degenerate (zero or negative
    /// denominator).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Cholesky factorization failed; the matrix is not positive definite.
    #[error("matrix not positive definite: {0}")]
    NotSpd(String),

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
