use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precision error: {0}")]
    Precision(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 for configuration/validation problems, 2 for I/O, 3 for malformed data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Format { .. } => 3,
            Error::Domain(_)
            | Error::Config(_)
            | Error::Precision(_)
            | Error::Resource(_)
            | Error::EmptyResult(_) => 1,
        }
    }
}
