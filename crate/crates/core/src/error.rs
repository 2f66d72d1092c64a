//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count {n} outside supported range 1..={max}")]
    SizeOutOfRange { n: usize, max: usize },
    #[error("duration must be nonnegative, got {0}")]
    NegativeDuration(f64),
    #[error("control value must lie in [0,1], got {0}")]
    ControlOutOfRange(f64),
    #[error("segment durations sum to {sum}, protocol declares {declared}")]
    DurationSumMismatch { sum: f64, declared: f64 },
    #[error("dimension {got} does not match expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("index {index} out of bounds for size {size}")]
    IndexOutOfBounds { index: usize, size: usize },
    #[error("time {t} outside protocol window [0, {t_total}]")]
    TimeOutOfRange { t: f64, t_total: f64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("eigensolver did not converge")]
    EigenFailure,
    #[error("histograms incompatible: {0}")]
    BinningMismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the command-line tool maps this error to.
    /// Usage and input problems are 2, runtime invariant violations 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvariantViolation(_) | Error::EigenFailure => 3,
            _ => 2,
        }
    }
}
