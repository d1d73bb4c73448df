use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector has the wrong shape for its role.
    #[error("dimension mismatch for {name}: expected {expected}, got {actual}")]
    DimensionMismatch {
        name: String,
        expected: String,
        actual: String,
    },

    /// A covariance or cost matrix has a significantly negative eigenvalue.
    #[error("{name} is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { name: String, eigenvalue: f64 },

    /// A matrix that must be invertible (R, or an innovation-like term) is not
    /// positive definite.
    #[error("{name} is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    NotPd { name: String, eigenvalue: f64 },

    /// Stopping probability outside (0, 1].
    #[error("stopping probability p = {p} is outside (0, 1]")]
    ProbabilityOutOfRange { p: f64 },

    /// H Sigma H^T + E could not be factorized even after jitter.
    #[error("innovation covariance H Sigma H^T + E is singular to working precision")]
    SingularInnovationCovariance,

    /// R + G^T Pi G failed positive-definite factorization.
    #[error("inner matrix R + G^T Pi G is not positive definite")]
    NonPdInnerMatrix,

    /// Fixed-point iteration ran out of iterations.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// An episode ran past the hard step cap.
    #[error("episode exceeded {cap} steps; check the stopping probability")]
    EpisodeCapExceeded { cap: usize },

    /// Malformed model or result document; `path` is the offending key path.
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    /// Malformed run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config/usage, 3 validation,
    /// 4 numerical failure, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::NotPsd { .. }
            | Error::NotPd { .. }
            | Error::ProbabilityOutOfRange { .. }
            | Error::Parse { .. } => 3,
            Error::SingularInnovationCovariance
            | Error::NonPdInnerMatrix
            | Error::NoConvergence { .. }
            | Error::EpisodeCapExceeded { .. } => 4,
            Error::Io(_) => 5,
        }
    }
}
