use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time windows differ: {left} vs {right}")]
    DomainMismatch { left: f64, right: f64 },

    #[error("arrival {index} at {value} lies outside [0, {window}]")]
    ArrivalOutOfWindow { index: usize, value: f64, window: f64 },

    #[error("degenerate design at x = {x}: {reason}")]
    DegenerateDesign { x: f64, reason: String },

    #[error("collinear design: covariance condition number {condition:e}")]
    CollinearDesign { condition: f64 },

    #[error("infeasible quantile constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("projection did not converge after {iterations} iterations (max violation {max_violation:e})")]
    SolverNonConvergence { iterations: usize, max_violation: f64 },

    #[error("no arrivals in any replicate; the intensity factor is undefined")]
    EmptyData,

    #[error("exponential overflow: curve magnitude {magnitude} exceeds {cap}")]
    Overflow { magnitude: f64, cap: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
