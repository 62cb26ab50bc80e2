use thiserror::Error;

/// Errors raised by the physics, pulse and optimization routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{quantity} = {value} is outside the valid domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: String,
    },

    #[error("extremal eigenvalue is degenerate (relative gap {gap:e})")]
    DegenerateEigenvalue { gap: f64 },

    #[error("density matrix invariant violated at t = {time:e} s: {reason}")]
    Integration { time: f64, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("malformed pulse record at {location}: {message}")]
    PulseParse { location: String, message: String },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
