use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ixframe::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Config { path: PathBuf, line: usize, message: String },
    #[error("suite {suite} needs about {projected_mb} MB, over the {cap_mb} MB memory cap (raise --mem-cap-mb or shrink --build-rows)")]
    OomGuard { suite: String, projected_mb: u64, cap_mb: u64 },
    #[error("{0}: indexed and baseline results differ")]
    Mismatch(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
