use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}:{line}: {msg}", path.display())]
    Config { path: PathBuf, line: usize, msg: String },

    #[error("missing artifact {} (run `dpmil {producer}` first)", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error(transparent)]
    Core(#[from] dpmil_core::Error),
}

impl CliError {
    /// 1 usage/configuration, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(dpmil_core::Error::Config(_)) => 1,
            CliError::MissingArtifact { .. } | CliError::Core(_) => 2,
        }
    }
}
