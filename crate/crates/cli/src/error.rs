use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] surfwatch::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: Box<CliError> },

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),

    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn at(path: impl Into<PathBuf>, e: impl Into<CliError>) -> Self {
        CliError::File {
            path: path.into(),
            source: Box::new(e.into()),
        }
    }
}
