use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}:{line}: unknown node key `{key}`", path.display())]
    UnknownNode {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("edge between undeclared type pair {0}-{1}")]
    UndeclaredEdgeType(String, String),

    #[error("{}:{line}: self-edge on `{key}`", path.display())]
    SelfEdge {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("meta-path `{path}` at position {pos}: {msg}")]
    MetaPath {
        path: String,
        pos: usize,
        msg: String,
    },

    #[error("path count overflow on meta-path {0}")]
    Overflow(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {0} (non-finite loss)")]
    Divergence(usize),

    #[error("loss mask is empty")]
    EmptyMask,

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("quick inference: {0}")]
    Batch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::MetaPath { .. } => ErrorKind::Config,
            Error::Overflow(_)
            | Error::NonFinite(_)
            | Error::Divergence(_)
            | Error::Dimension(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
