use thiserror::Error;

/// Errors raised by the simulation and statistics routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("out of range: {0}")]
    Range(String),

    /// Not enough atoms or trials for the requested statistic.
    #[error("insufficient data: {0}")]
    Insufficient(String),

    /// A sampled phase curve was not monotone where monotone interpolation was required.
    #[error("non-monotone phase samples: {0}; refine the grid")]
    NonMonotone(String),

    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn range(msg: impl Into<String>) -> Error {
    Error::Range(msg.into())
}
