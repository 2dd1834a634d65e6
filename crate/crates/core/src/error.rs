use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid moments: {0}")]
    InvalidMoments(String),
    #[error("infeasible moments: variance {variance:.6e} must be below mean*(1-mean) = {bound:.6e}")]
    InfeasibleMoments { variance: f64, bound: f64 },
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty support: density integrates to {0:.3e} over the grid")]
    EmptySupport(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(
        "LP solver failed after {iterations} iterations: {reason} \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e}, gap {gap:.3e})"
    )]
    SolverFailure {
        reason: String,
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
    },
    #[error("infeasible flow: {0}")]
    InfeasibleFlow(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("demand ingestion error: {0}")]
    Ingestion(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical or solver failures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::SolverFailure { .. } | Error::InfeasibleFlow(_)
        )
    }
}
