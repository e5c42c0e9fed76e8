use thiserror::Error;

/// Errors produced by scene construction, planning, and model I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("exhaustive search supports at most {max} proposals, got {got}")]
    Capacity { max: usize, got: usize },

    #[error("proposal index {index} out of range for {len} proposals")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("feature dimension {got} does not match model input {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
