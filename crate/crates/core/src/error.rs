use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid scale factor {0}")]
    InvalidScale(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ambiguous interpolation between keyframes {0} and {1}: rotations are 180 degrees apart")]
    AmbiguousRotation(usize, usize),

    #[error("no valid observations")]
    NoObservations,

    #[error("scale alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("clip alignment was rejected by outlier filtering")]
    RejectedAlignment,

    #[error("invalid kernel size {0}: must be odd and at least 1")]
    InvalidKernel(usize),

    #[error("alpha at step {t} is {alpha:e}, below the numerical floor")]
    NumericalFloor { t: usize, alpha: f64 },

    #[error("degenerate scene scale for the {0} trajectory")]
    DegenerateScale(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("timestamps not strictly increasing at line {0}")]
    Ordering(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
