use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A conductivity left the admissible set `min(sigma) > 0`.
    #[error("parameter outside admissible set: min value {min} at index {index}")]
    DomainViolation { index: usize, min: f64 },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("reduced basis is empty")]
    EmptyBasis,

    #[error("dense reduced system is not positive definite")]
    SingularReducedSystem,

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("iterate left the admissible set at iteration {iteration}: min value {min:e} <= floor {floor:e}")]
    PositivityViolation { iteration: usize, min: f64, floor: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed file: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
