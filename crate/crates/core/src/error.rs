use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// Variants are grouped by the process exit code the CLI maps them to:
/// I/O and malformed data exit with 2, contract violations with 3, and
/// configuration problems with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } | Error::Data(_) => 2,
            Error::Contract(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
