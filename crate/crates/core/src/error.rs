use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input {0}")]
    MissingInput(PathBuf),

    /// A file exists but its content does not follow the declared format.
    #[error("format error in {what}: {reason}")]
    Format { what: String, reason: String },

    /// Two inputs disagree (dimensions, slide ids, magnifications).
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no positive class: the label grids contain no tumor cells")]
    NoPositiveClass,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Like [`Error::io`], but a file that does not exist is reported as a
    /// missing input rather than an I/O failure.
    pub fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.into())
        } else {
            Error::io(path, source)
        }
    }

    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line tool: 1 for I/O failures,
    /// 2 for everything that is a validation problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
