use std::path::PathBuf;

use thiserror::Error;

use crate::fol::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("invalid knowledge base: {0}")]
    InvalidKb(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("no bindings to sample: every scene is empty")]
    EmptyUniverse,

    #[error("herbrand base has {size} atoms, above the enumeration cap of {cap}")]
    BaseTooLarge { size: usize, cap: usize },

    #[error("variable does not belong to this tape")]
    NotOnTape,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
