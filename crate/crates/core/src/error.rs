use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("non-finite input at index {index}")]
    NonFinite { index: usize },
    #[error("numeric overflow at index {index}")]
    Overflow { index: usize },
    #[error("weights must be nonnegative and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("exponent must be positive, got {0}")]
    InvalidExponent(f64),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology parameters: {0}")]
    InvalidParameters(String),
    #[error("could not generate a connected window {window} after {attempts} resamples")]
    GenerationFailed { window: usize, attempts: usize },
    #[error("malformed topology file at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("malformed edge list at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("feature dimension {found} does not match model dimension {expected}")]
    FeatureDimension { expected: usize, found: usize },
    #[error("parameter vector has length {found}, model expects {expected}")]
    ParameterLength { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("gradient descent diverged: loss increased for {streak} consecutive steps ending at iteration {iteration}")]
    Diverged { iteration: usize, streak: usize },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("partition error: {0}")]
    Partition(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("iteration {iteration}, device {device}: {source}")]
    Numeric {
        iteration: usize,
        device: usize,
        source: PowerError,
    },
    #[error("iteration {iteration}, device {device}: {source}")]
    Learner {
        iteration: usize,
        device: usize,
        source: LearnerError,
    },
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Power(#[from] PowerError),
    #[error("malformed snapshot file at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
