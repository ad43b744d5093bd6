use thiserror::Error;

use crate::spectral::HmmParams;

/// Errors produced by the estimation and selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The projected lag-two moment matrix is numerically singular, so the
    /// spectral observable matrices cannot be formed reliably.
    #[error("ill-conditioned moments: {0}")]
    IllConditionedMoments(String),

    /// Every randomized diagonalization attempt produced complex or
    /// non-separated eigenvalues.
    #[error("joint diagonalization failed after {attempts} attempts")]
    DiagonalizationFailure { attempts: usize },

    /// The least-squares optimizer could not decrease the criterion; the
    /// best iterate found so far is attached.
    #[error("optimization stalled: {message}")]
    OptimizationStalled {
        message: String,
        best: Box<HmmParams>,
    },

    #[error("no unique stationary distribution: {0}")]
    NoUniqueStationary(String),

    #[error("estimator family is not aligned; run alignment first")]
    UnalignedFamily,

    #[error("unsupported schema version {found:?}; this reader supports major version {supported}")]
    SchemaVersion { found: String, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
