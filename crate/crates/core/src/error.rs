use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} requires a non-empty input")]
    EmptyInput(&'static str),

    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("brute-force assignment refused: {0}")]
    TooLarge(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("layout does not fit: requires at least {min_width}x{min_height} px")]
    LayoutDoesNotFit { min_width: f64, min_height: f64 },

    #[error("counter failed on slice `{slice}`: {reason}")]
    Counter { slice: String, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
