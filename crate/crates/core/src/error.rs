use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite state")]
    NonFiniteState,

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("lower bound exceeds upper bound at coordinate {index}")]
    InvalidBounds { index: usize },

    #[error("diverged: non-finite objective or gradient at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("{subproblem} subproblem failed at ADMM iteration {iteration}: {source}")]
    InnerSolver {
        subproblem: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("lag exceeds horizon ({lag} s >= {horizon} s)")]
    LagExceedsHorizon { lag: f64, horizon: f64 },

    #[error("empty log")]
    EmptyLog,

    #[error("closed loop aborted at t = {t:.3} s after {failures} consecutive solver failures: {last}")]
    Aborted { t: f64, failures: usize, last: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
