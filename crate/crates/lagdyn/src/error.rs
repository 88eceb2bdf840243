use std::path::{Path, PathBuf};

/// Failure of a command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<lagdyn_core::Error> for AppError {
    fn from(e: lagdyn_core::Error) -> Self {
        match e {
            lagdyn_core::Error::NumericalBlowup { .. } => AppError::Numerical(e.to_string()),
            lagdyn_core::Error::InvalidArgument(_) => AppError::Config(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;

pub fn read_to_string(path: &Path) -> AppResult<String> {
    std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| AppError::io(path, e))
}

pub fn under(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
