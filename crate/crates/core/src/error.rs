use thiserror::Error;

use crate::grid::GridFunction;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch in {context}: expected {expected} nodes, got {actual}")]
    GridMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid box constraints: {0}")]
    InvalidBox(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An iterative solver hit its iteration cap. Carries the best iterate.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { solver: &'static str, iterations: usize, residual: f64, best: Option<Box<GridFunction>> },

    #[error("outer iteration {k}: {source}")]
    Iteration {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("benchmark construction failed: {0}")]
    Construction(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True if this error (or the error it wraps) is a solver non-convergence.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } => true,
            Error::Iteration { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}
