use thiserror::Error;

/// Every failure the simulation library can report.
///
/// The variants are grouped by error class; the CLI maps each class to its
/// own exit code via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance spec: {0}")]
    InvalidSpec(String),

    #[error("grid does not resolve the kernel: {0}")]
    Resolution(String),

    #[error("explicit step is unstable: {0}")]
    Stability(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("environment mismatch: {0}")]
    EnvironmentMismatch(String),

    #[error("insufficient replicas: need at least {needed}, got {got}")]
    InsufficientReplicas { needed: usize, got: usize },

    #[error("empty particle ensemble")]
    EmptyEnsemble,

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Resolution,
    Stability,
    Replicas,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidSpec(_) | Error::Config(_) | Error::Domain(_) => ErrorClass::Config,
            Error::Resolution(_) => ErrorClass::Resolution,
            Error::Stability(_) => ErrorClass::Stability,
            Error::InsufficientReplicas { .. } => ErrorClass::Replicas,
            Error::EnvironmentMismatch(_)
            | Error::EmptyEnsemble
            | Error::NonFinite(_)
            | Error::NonConvergence(_) => ErrorClass::Numerical,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
