use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("dimension must be at least 1")]
    ZeroDimension,

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("row {0} has (near) zero norm")]
    ZeroNormRow(usize),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("pair is inside the arccos clamp band (|cos| = {0})")]
    ClampBand(f64),

    #[error("probability entry {value} at record {record} is below the floor")]
    DegenerateProbability { record: usize, value: f64 },

    #[error("probability vector at record {record} is invalid: {reason}")]
    InvalidProbabilities { record: usize, reason: String },

    #[error("prediction log is empty")]
    EmptyLog,

    #[error("record {record} has {actual} probabilities, expected {expected}")]
    RaggedProbabilities {
        record: usize,
        expected: usize,
        actual: usize,
    },

    #[error("weighted average over an empty set")]
    EmptySet,

    #[error("non-finite gradient entry at ({row}, {col})")]
    NonFiniteGradient { row: usize, col: usize },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
