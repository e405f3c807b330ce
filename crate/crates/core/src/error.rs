use thiserror::Error;

/// Errors raised by the model, pricing, filtering, calibration and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive semidefinite (minimum eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("measure P is not supported for the three-factor specification")]
    UnsupportedMeasure,

    #[error("time ordering violated: {0}")]
    TimeOrder(String),

    #[error("correlation undefined: zero variance in leg {leg}")]
    UndefinedCorrelation { leg: usize },

    #[error("degenerate instrument variance {variance:e} in hedge ratio")]
    DegenerateVariance { variance: f64 },

    #[error("innovation covariance is singular at date index {date_index}")]
    SingularInnovation { date_index: usize },

    #[error("objective is non-finite on the entire initial population")]
    InfeasibleStart,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// Broad category used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnsupportedMeasure => ErrorKind::Config,
            Error::Data(_) => ErrorKind::Data,
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::TimeOrder(_) => ErrorKind::Config,
            _ => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
