use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("positivity lost at t = {t}: min value {min:e} below tolerance {tol:e}")]
    PositivityLost { t: f64, min: f64, tol: f64 },

    #[error("numerical state became non-finite at t = {t} without exceeding the blowup cap")]
    InternalNonFinite { t: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("no bracket for the root below t_max = {t_max}")]
    NoBracket { t_max: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
