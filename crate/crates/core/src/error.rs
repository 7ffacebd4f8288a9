use std::path::PathBuf;

/// Errors raised across the pipeline. Each variant maps to a stable
/// category string used by the command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("camera origin is outside the lumen")]
    CameraOutsideLumen,
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("phase mismatch: expected {expected}, found {found}")]
    PhaseMismatch { expected: String, found: String },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("run directory {0} is locked by another process")]
    RunLocked(PathBuf),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Machine-parsable category, one word.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::CameraOutsideLumen => "CameraOutsideLumen",
            Error::EmptyBatch(_) => "EmptyBatch",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::MissingLabels(_) => "MissingLabels",
            Error::PhaseMismatch { .. } => "PhaseMismatch",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::RunLocked(_) => "RunLocked",
            Error::Io { .. } => "IoError",
            Error::Image { .. } => "IoError",
            Error::Json { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
