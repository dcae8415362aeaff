use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown builtin problem `{0}`")]
    UnknownBuiltin(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(String),

    #[error("matrix `{name}` is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { name: String, asymmetry: f64 },

    #[error("joint noise covariance is not positive semidefinite (pivot {pivot:e})")]
    NotPsd { pivot: f64 },

    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),

    #[error("no feasible step size: {0}")]
    Infeasible(String),

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("iterate diverged at k = {k}{}", replication.map(|r| format!(" (replication {r})")).unwrap_or_default())]
    Diverged {
        k: u64,
        replication: Option<usize>,
        partial: Option<Box<crate::solver::Trajectory>>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
