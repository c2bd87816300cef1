//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by sampling, distance evaluation, filtering and caching.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is structurally invalid (zero sample count,
    /// too few quadrature nodes, nonpositive bounds, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Matrix or vector sizes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A sample configuration on which the gradient (or a transform) is
    /// undefined, e.g. two samples of a symmetric set coinciding.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A numerical operation failed (Cholesky of an indefinite matrix,
    /// non-finite intermediate values, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A cache file exists but its contents are not trustworthy.
    #[error("cache integrity: {0}")]
    CacheIntegrity(String),

    /// Underlying I/O failure while reading or writing cache files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
