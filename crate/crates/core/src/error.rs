use thiserror::Error;

use crate::linalg::LinalgError;
use crate::probdist::ProbError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("time {0} outside [0, 1]")]
    Domain(f64),
    #[error("kernel is not positive semidefinite (min eigenvalue {min:e}, max {max:e})")]
    NotPsd { min: f64, max: f64 },
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("target power {target} not reached by n2 = {n_max} (power there {best:.4})")]
    Unreachable { target: f64, n_max: usize, best: f64 },
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::InvalidInput(_) | Error::Domain(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
