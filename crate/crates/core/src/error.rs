use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, bad range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Something that should be impossible given a correctly built model.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

/// Bails out with a [`Error::Contract`] when the condition does not hold.
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
