use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad configuration, arguments or input files.
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] lgnet_core::Error),
}

impl AppError {
    pub fn input(msg: impl Into<String>) -> Self {
        AppError::Input(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io { path: path.to_owned(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Input(_) => 2,
            AppError::Io { .. } | AppError::Core(_) => 1,
        }
    }
}
