use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty cluster {0}")]
    EmptyCluster(usize),

    #[error("strong convexity not certified (smallest curvature {0:e})")]
    StrongConvexityNotCertified(f64),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("no connected placement after {attempts} attempts for cluster {cluster}")]
    PlacementFailed { cluster: usize, attempts: usize },

    #[error("spectral radius {0} is not below 1")]
    SpectralRadius(f64),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("sublinear-rate certificate inapplicable: {0}")]
    RateCertificateInapplicable(String),

    #[error("gradient diversity too large: omega={omega} not below omega_max within alpha <= {cap}")]
    DiversityTooLarge { omega: f64, cap: f64 },

    #[error("negative radicand {0:e} in phi_max; rerun feasibility")]
    RerunFeasibility(f64),

    #[error("infeasible control problem after relaxation: {0}")]
    Infeasible(String),

    #[error("non-finite value at timestep {t}: {what}")]
    NonFinite { t: usize, what: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}:{row}:{column}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
