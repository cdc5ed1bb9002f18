use serde::Serialize;
use thiserror::Error;

/// Errors raised by the geometry, sampling, optimization and experiment layers.
#[derive(Debug, Error, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geodesic: points are antipodal (inner product {inner})")]
    DegenerateGeodesic { inner: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    /// NNLS hit its iteration cap; `best` holds the last feasible coefficients.
    #[error("nnls did not converge after {iterations} iterations (residual {residual})")]
    NnlsNonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// Rejection sampler ran out of attempts before collecting the requested points.
    #[error("low acceptance: {accepted} of {requested} points after {attempts} attempts")]
    LowAcceptance {
        requested: usize,
        accepted: usize,
        attempts: u64,
        measure_estimate: f64,
    },

    #[error("no convergence: {0}")]
    NonConvergence(String),
}

impl Error {
    /// Stable short code used in JSON error records.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateGeodesic { .. } => "degenerate_geodesic",
            Error::PreconditionViolated(_) => "precondition_violated",
            Error::NnlsNonConvergence { .. } => "nnls_non_convergence",
            Error::LowAcceptance { .. } => "low_acceptance",
            Error::NonConvergence(_) => "non_convergence",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
