use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures reported by a landmark, eye or embedding backend.
///
/// These are distinct from "nothing found": a backend that works but sees no
/// face returns `Ok(None)`, never an error.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),
    #[error("invalid eye annotation: {0}")]
    InvalidEye(String),
    #[error("model artifact unavailable at {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error("malformed annotation {path}:{line}: {cause}")]
    Annotation {
        path: PathBuf,
        line: usize,
        cause: String,
    },
    #[error("backend failure: {0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    InsufficientSkinArea { viable: usize },
    DegenerateEyeBox,
}

impl std::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::InsufficientSkinArea { viable } => {
                write!(f, "insufficient skin area: {viable} viable patch(es), need at least 2")
            }
            Self::DegenerateEyeBox => f.write_str("degenerate eye box"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("score is not finite: {0}")]
    InvalidScore(f64),
    #[error("severity label {0} outside 1..=5")]
    InvalidLabel(i64),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {cause}")]
    Manifest { line: usize, cause: String },
    #[error("golden set line {line}: {cause}")]
    GoldenFormat { line: usize, cause: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no face found")]
    NoFaceFound,
    #[error("geometry error: {0}")]
    Geometry(GeometryError),
    #[error("roll size {roll_size} must be smaller than extent {extent}")]
    RollSpec { roll_size: usize, extent: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("patch {index} has no severity label")]
    MissingLabel { index: usize },
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    InputShape { expected: String, actual: String },
    #[error("training diverged: non-finite loss at step {step}")]
    Divergence { step: usize },
    #[error("invalid training config: {0}")]
    TrainConfig(String),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error("length mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("inconsistent panel: {0}")]
    Panel(String),
    #[error("correlation undefined for constant input")]
    UndefinedCorrelation,
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// True for per-image failures of the patch-extraction stage (no face,
    /// not enough skin, undecodable input) as opposed to infrastructure errors.
    pub fn is_extraction_failure(&self) -> bool {
        matches!(
            self,
            Self::NoFaceFound | Self::Geometry(_) | Self::Decode(_) | Self::InvalidImage(_)
        )
    }
}

impl From<GeometryError> for Error {
    fn from(e: GeometryError) -> Self {
        Self::Geometry(e)
    }
}
