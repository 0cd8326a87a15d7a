use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input vector is not unit length (|v| = {0})")]
    NonUnitVector(f64),
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("operation undefined on the absorbing zero point")]
    ZeroPoint,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("calibration did not converge after {rounds} rounds (last estimate {last_estimate:e})")]
    CalibrationFailed { rounds: usize, last_estimate: f64 },
    #[error("no contraction detected within {0} terms")]
    NoContraction(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
