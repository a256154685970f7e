use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RdsError {
    #[error(transparent)]
    Core(#[from] rds_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {message} (byte offset {offset})", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("external denoiser: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, RdsError>;

impl RdsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        RdsError::Io {
            path: path.into(),
            source,
        }
    }
}
