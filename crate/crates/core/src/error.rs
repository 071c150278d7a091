use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Sequences or matrices whose lengths/shapes must agree do not.
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value violates a structural requirement (empty list, bad shape, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// Invalid or infeasible experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Client/server exchange did not follow the round protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// An input file does not follow its binary format.
    #[error("{path}: malformed {field}: {msg}")]
    Format {
        path: PathBuf,
        field: &'static str,
        msg: String,
    },

    #[error("operation requires a classification task")]
    UnsupportedTask,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}
