use std::path::PathBuf;

use crate::config::Violation;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("malformed artifact {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("run stopped early ({0}); artifacts are truncated")]
    Truncated(String),
    #[error(transparent)]
    Core(#[from] spsgf_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::Truncated(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
