use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] steerlab_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Experiment(String),
    #[error("eval prompts overlap steering set {0}")]
    PromptOverlap(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingFile(path.to_path_buf())
        } else {
            HarnessError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Core(steerlab_core::Error::Io { source, .. })
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                "missing_file"
            }
            HarnessError::Core(e) => e.code(),
            HarnessError::Config(_) => "config",
            HarnessError::MissingFile(_) => "missing_file",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv(_) => "csv",
            HarnessError::Experiment(_) => "experiment",
            HarnessError::PromptOverlap(_) => "prompt_overlap",
        }
    }

    /// The path a missing-file error refers to.
    pub fn missing_path(&self) -> Option<&Path> {
        match self {
            HarnessError::MissingFile(p) => Some(p),
            HarnessError::Core(steerlab_core::Error::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
                Some(path)
            }
            _ => None,
        }
    }
}
