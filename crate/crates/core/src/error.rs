use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("value {0} lies outside [0, 1]")]
    OutsideUnitInterval(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("group `{0}` depends on the prediction; pattern routing requires prediction-independent binary groups")]
    PredictionDependentGroup(String),

    #[error("mixture weights are not on the simplex: {0}")]
    InvalidWeights(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("exact arithmetic overflow: {0}")]
    Overflow(String),

    #[error("malformed rational `{0}`")]
    ParseRational(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
