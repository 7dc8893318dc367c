use thiserror::Error;

use crate::estimators::FittedModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid norm order {0}: must be >= 1 or infinity")]
    InvalidOrder(f64),

    #[error("norm orders must satisfy q > p (got p = {p}, q = {q})")]
    OrderMismatch { p: String, q: String },

    #[error("no attack direction exists for a zero parameter vector")]
    DegenerateDirection,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("gamma = 1 is the interpolation threshold; the limit diverges there")]
    Pole,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        best: Box<FittedModel>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
