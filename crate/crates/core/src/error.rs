use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quaternion: norm {norm} deviates from 1")]
    InvalidQuaternion { norm: f64 },
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("degenerate rotation axis: vector part norm {norm:e}")]
    DegenerateAxis { norm: f64 },
    #[error("logarithm is ill-conditioned at the antipodal boundary (distance {distance})")]
    IllConditionedLog { distance: f64 },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("need at least {needed} hypotheses, got {got}")]
    InsufficientHypotheses { needed: usize, got: usize },
    #[error("need at least 3 usable rotation axes, got {0}")]
    InsufficientAxes(usize),
    #[error("concentration values must be non-positive and ordered, got {0:?}")]
    InvalidConcentration([f64; 4]),
    #[error("all hypotheses are masked")]
    NoActiveHypotheses,
    #[error("input width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported format version: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
