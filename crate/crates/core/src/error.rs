use thiserror::Error;

/// Errors raised by the camera, loss and network routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid image size {width}x{height}")]
    InvalidImage { width: f64, height: f64 },
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("invalid crop spec: {0}")]
    InvalidSpec(String),
    #[error("need at least 2 crops, got {0}")]
    NotEnoughCrops(usize),
    #[error("need at least 2 samples and 2 crops, got N={n}, M={m}")]
    NotEnoughSamples { n: usize, m: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical error at iteration {iteration:?}: {message}")]
    Numerical {
        iteration: Option<usize>,
        message: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            iteration: None,
            message: message.into(),
        }
    }

    /// True for failures that stem from floating point blow-ups rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
