use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("schema error in {file}: {reason}")]
    Schema { file: String, reason: String },

    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Engine(#[from] llngm::Error),

    #[error("not converged after {0} iterations; see the diagnostics output")]
    NotConverged(usize),
}

impl CliError {
    pub fn config(key: impl Into<String>, reason: impl Display) -> Self {
        CliError::Config { key: key.into(), reason: reason.to_string() }
    }

    pub fn schema(file: impl AsRef<Path>, reason: impl Display) -> Self {
        CliError::Schema { file: file.as_ref().display().to_string(), reason: reason.to_string() }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Schema { .. } | CliError::Io { .. } => 2,
            CliError::Engine(llngm::Error::Numerical(_) | llngm::Error::Divergence { .. }) => 3,
            CliError::Engine(_) => 2,
            CliError::NotConverged(_) => 4,
        }
    }
}
