use std::path::{Path, PathBuf};

use dmage_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn data_io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("cannot read {}: {e}", path.display()))
    }

    pub fn output(path: &Path, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 configuration, 3 data, 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Output { .. } => 1,
            CliError::Core(e) => match e {
                CoreError::Config(_) => 2,
                CoreError::Parse { .. }
                | CoreError::Io { .. }
                | CoreError::Dimension(_)
                | CoreError::InvalidGraph(_)
                | CoreError::Label(_)
                | CoreError::Container { .. }
                | CoreError::Eval(_) => 3,
                CoreError::NonFinite { .. } | CoreError::StaleTape { .. } => 4,
            },
        }
    }
}
