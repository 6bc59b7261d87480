use thiserror::Error;

/// Errors raised by the collocation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("level index must be at least 1, got {0}")]
    InvalidLevel(usize),

    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("point set contains coincident points (indices {first} and {second})")]
    DuplicatePoints { first: usize, second: usize },

    #[error("radius must be nonnegative, got {0}")]
    NegativeRadius(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("coefficient field `{field}` is undefined at {at:?}")]
    UndefinedCoefficient { field: String, at: Vec<f64> },

    #[error("operator is not strictly elliptic at {at:?} (minimum eigenvalue {min_eigenvalue})")]
    NotElliptic { min_eigenvalue: f64, at: Vec<f64> },

    #[error("collocation system is not oversampled: {rows} test rows for {cols} trial centers")]
    NotOversampled { rows: usize, cols: usize },

    #[error("collocation matrix is identically zero (scale {delta} is below every trial-test distance)")]
    ZeroMatrix { delta: f64 },

    #[error("matrix is numerically rank deficient (pivot {pivot:e} at step {step}, largest {largest:e})")]
    Singular { step: usize, pivot: f64, largest: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
