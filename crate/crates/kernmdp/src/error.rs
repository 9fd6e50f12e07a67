//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model construction, numerics, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed something structurally invalid (bad dimensions, empty
    /// grids, out-of-range parameters, malformed config).
    #[error("invalid input: {0}")]
    Input(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The feature map changed width; the posterior must be rebuilt from the
    /// raw observation history instead of appending in place.
    #[error("feature dimension changed from {expected} to {got}; rebuild the posterior from raw history")]
    RebuildRequired { expected: usize, got: usize },

    /// A matrix factorization failed even after jitter escalation.
    #[error("factorization failed in {context} (size {size})")]
    Factorization { context: &'static str, size: usize },

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
