use thiserror::Error;

/// Errors raised by the estimation and testing routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank deficient {what}")]
    RankDeficient { what: String },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    NotPositiveDefinite {
        what: String,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("nonstationary input: {0}")]
    NonStationary(String),

    #[error("series did not converge: {0}")]
    NonConvergence(String),

    #[error("dense materialization of a {size}x{size} matrix exceeds the limit of {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("experiment cell aborted: {failures} of {reps} replications failed ({first})")]
    CellAborted {
        failures: usize,
        reps: usize,
        first: String,
    },
}

impl Error {
    /// True for failures caused by bad inputs rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch(_) | Error::InvalidArgument(_) | Error::SizeGuard { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
