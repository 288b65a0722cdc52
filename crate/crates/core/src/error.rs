use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum TacError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TacError {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            TacError::InvalidDimension(_) => 10,
            TacError::NumericalFailure(_) => 11,
            TacError::DegenerateVector(_) => 12,
            TacError::InvalidEpisode(_) => 13,
            TacError::InvalidState(_) => 14,
            TacError::InvalidDataset(_) => 15,
            TacError::InvalidSpec(_) => 16,
            TacError::InvalidConfig(_) => 17,
            TacError::Format(_) => 18,
            TacError::Io(_) => 19,
        }
    }
}

pub type Result<T> = std::result::Result<T, TacError>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::TacError::InvalidDimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
