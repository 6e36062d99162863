use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] somtom::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path} is invalid:\n  {}", problems.join("\n  "))]
    InvalidManifest { path: PathBuf, problems: Vec<String> },

    #[error("{failed} of {total} records failed, above the failure budget of {budget}")]
    BudgetExceeded {
        failed: usize,
        total: usize,
        budget: f64,
    },
}

impl CliError {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::File {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        CliError::Json {
            path: path.into(),
            source,
        }
    }

    /// 1 for a run that completed but did not meet its bar, 2 for bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::BudgetExceeded { .. } | CliError::Core(somtom::Error::UndefinedMetric(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
