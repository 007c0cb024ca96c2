//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the numerical kernels and drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not pair up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or configuration violates a stated invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A linear system could not be solved.
    #[error("singular matrix encountered{}", step_suffix(*.step))]
    Singular { step: Option<usize> },

    /// Integration produced NaN or infinity.
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    /// An iteration hit its cap before meeting the tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    /// The coupled Gronwall bound is not available.
    #[error("contraction condition violated (value {0:e})")]
    ContractionViolated(f64),

    /// A perturbed model differs from its reference outside the declared family.
    #[error("models differ outside family {family}: {detail}")]
    Family { family: String, detail: String },

    /// Filesystem failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON encoding or decoding failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// CSV encoding failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
