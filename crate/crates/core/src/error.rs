//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Cholesky factorization failed; carries a lower bound on the smallest
    /// eigenvalue (Gershgorin estimate) of the offending matrix.
    #[error("precision matrix is not positive definite (min eigenvalue estimate {min_eigenvalue_estimate:.3e})")]
    NotPositiveDefinite { min_eigenvalue_estimate: f64 },

    #[error("conjugate gradient did not converge within {max_iter} iterations (relative residual {residual:.3e}, tol {tol:.3e})")]
    CgDidNotConverge {
        max_iter: usize,
        residual: f64,
        tol: f64,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("sampler failed at iteration {iteration}: {source}")]
    SamplerAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
