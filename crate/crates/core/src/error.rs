use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// `Contract` is a violated precondition on in-memory values, `Io` a failed
/// filesystem operation and `Format` a file that could not be decoded.
#[derive(Debug, Error)]
pub enum FrescoError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

impl FrescoError {
    pub fn contract(msg: impl Into<String>) -> Self {
        FrescoError::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        FrescoError::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FrescoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FrescoError::Contract(_) => 2,
            FrescoError::Io { .. } | FrescoError::Format(_) => 1,
        }
    }
}

pub type Result<T, E = FrescoError> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::FrescoError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
