use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable error kind printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("point lies on or outside the ball boundary (norm {norm}, radius {radius})")]
    BoundaryPoint { norm: f64, radius: f64 },
    #[error("invalid curvature magnitude {0}")]
    InvalidCurvature(f64),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("node id {id} out of range for {n} nodes")]
    Range { id: usize, n: usize },
    #[error("split error: {0}")]
    Split(String),
    #[error("graph too large: {0}")]
    Size(String),
    #[error("episode infeasible: {0}")]
    EpisodeInfeasible(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("diffusion step {step} outside 1..={max}")]
    Step { step: usize, max: usize },
    #[error("diffusion model has not been trained")]
    ModelNotTrained,
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("empty class: {0}")]
    EmptyClass(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: String, expected: String },
}

impl Error {
    /// Stable identifier for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "InvalidShape",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::MissingGradient(_) => "MissingGradient",
            Error::NonFinite(_) => "NonFinite",
            Error::GeometryMismatch(_) => "GeometryMismatch",
            Error::BoundaryPoint { .. } => "BoundaryPoint",
            Error::InvalidCurvature(_) => "InvalidCurvature",
            Error::Parse { .. } => "ParseError",
            Error::Range { .. } => "RangeError",
            Error::Split(_) => "SplitError",
            Error::Size(_) => "SizeError",
            Error::EpisodeInfeasible(_) => "EpisodeInfeasible",
            Error::Schedule(_) => "ScheduleError",
            Error::Step { .. } => "StepError",
            Error::ModelNotTrained => "ModelNotTrained",
            Error::TrainingDiverged { .. } => "TrainingDiverged",
            Error::Param(_) => "ParamError",
            Error::EmptyClass(_) => "EmptyClass",
            Error::Label(_) => "LabelError",
            Error::DiagnosticUnavailable(_) => "DiagnosticUnavailable",
            Error::Io { .. } => "IoError",
            Error::Format(_) => "FormatError",
            Error::Version { .. } => "VersionError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
