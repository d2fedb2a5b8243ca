use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The instance is too large for exact integer or memory bookkeeping.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A caller violated an operation's contract (dimension mismatch, bad argument).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Moment matrix, kernel matrix or change of basis lost numerical rank.
    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite kernel entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Parse { .. } | Error::Domain(_) => 2,
            Error::Io { .. } => 4,
            Error::Capacity(_)
            | Error::Precondition(_)
            | Error::Degenerate(_)
            | Error::Numeric(_)
            | Error::NonFinite { .. } => 3,
        }
    }
}

pub(crate) fn check_dims(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Usage(format!(
            "{what}: expected dimension {expected}, got {got}"
        )));
    }
    Ok(())
}
