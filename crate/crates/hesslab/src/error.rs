//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data, reported with the 1-based line it came from.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration failed validation before any simulation ran.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A storage device cannot supply the requested terminal power.
    #[error(
        "requested {requested_w:.3} W exceeds the maximum deliverable {max_deliverable_w:.3} W"
    )]
    PowerInfeasible {
        requested_w: f64,
        max_deliverable_w: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            msg: msg.into(),
        }
    }
}
