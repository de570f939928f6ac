use thiserror::Error;

/// Errors raised by the identification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("fractional order s = {0} outside (0, 1)")]
    OrderOutOfRange(f64),

    #[error("invalid horizon delta = {0}")]
    InvalidHorizon(f64),

    #[error("operation requires a finite horizon")]
    InfiniteHorizon,

    #[error("s = {s} outside the schedule range [{min}, {max}]")]
    OutsideSchedule { s: f64, min: f64, max: f64 },

    #[error("invalid schedule parameter: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error(
        "iterative solver stalled after {iterations} iterations (relative residual {residual:e})"
    )]
    SolverStalled { iterations: usize, residual: f64 },

    #[error("infeasible parameter: {0}")]
    Infeasible(String),

    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e})")]
    QuadratureFailed { tol: f64, estimate: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
