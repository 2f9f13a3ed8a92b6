use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed at every rung of the jitter ladder.
    #[error("ill-conditioned covariance matrix (jitter tried: {jitter_ladder:?})")]
    IllConditionedCovariance { jitter_ladder: Vec<f64> },

    #[error("objective returned no finite value")]
    NoFiniteValue,

    #[error("no MAP restart produced a fittable model")]
    NoFittableRestart,

    #[error("objective evaluation failed: {0}")]
    Objective(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
