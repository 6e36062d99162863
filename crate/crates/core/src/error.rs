use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the extraction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("robust fit failed: {0}")]
    RobustFitFailed(String),

    #[error("projected point lies at infinity (|w| = {w:e})")]
    PointAtInfinity { w: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("mark {0} is not present in the mark set")]
    UnknownMark(u32),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Non-fatal conditions surfaced alongside results.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum Warning {
    /// No label corner fit inside the image; the label box was clamped.
    PlacementDegraded { label: u32 },
    /// A homography step was not estimated; points passed through untransformed.
    StabilizationSkipped { step: usize, reason: String },
    /// No foreground traces survived classification.
    NoForeground,
    /// Fewer background traces than the requested 2k clusters.
    BackgroundClustersClamped { requested: usize, available: usize },
    /// An action dimension had identical low/high percentiles and was widened.
    DegenerateDimension { dim: usize },
}

impl Warning {
    pub(crate) fn emit(self) -> Self {
        log::warn!("{self:?}");
        self
    }
}
