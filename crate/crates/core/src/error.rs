use thiserror::Error;

/// Errors raised by constructors and operations in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("weights must be non-negative and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("joint covariance is not positive definite (determinant = {det})")]
    NotPositiveDefinite { det: f64 },

    #[error("autoregressive model is not stable (spectral radius = {radius})")]
    Unstable { radius: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("basis is not orthonormal (max deviation = {deviation})")]
    NotOrthonormal { deviation: f64 },

    #[error("operation requires one-dimensional measures, got d = {0}")]
    NotOneDimensional(usize),

    #[error("dense plan of {entries} entries exceeds the export limit of {limit}")]
    SizeGuard { entries: usize, limit: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("sinkhorn did not converge after {iterations} iterations (marginal error = {error})")]
    NotConverged { iterations: usize, error: f64 },

    #[error("serialization failed: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
