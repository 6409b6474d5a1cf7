use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("label out of range: {0}")]
    Label(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stale gradient tape: recorded for parameter version {recorded}, current is {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("non-finite loss at epoch {epoch} (last finite epoch: {last_finite:?})")]
    NonFinite {
        epoch: usize,
        last_finite: Option<usize>,
    },

    #[error("bad container file {path}: {msg}")]
    Container { path: PathBuf, msg: String },

    #[error("{0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
