use std::path::PathBuf;

use crate::data::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("scale mismatch: {left} vs {right} fractional bits")]
    ScaleMismatch { left: u32, right: u32 },

    #[error("value {value} at index {index} does not fit the fixed-point grid with {scale_bits} fractional bits")]
    QuantizeOverflow { index: usize, value: f64, scale_bits: u32 },

    #[error("fixed-point overflow at index {index}")]
    AccumulatorOverflow { index: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("task {0} has no training examples")]
    EmptyTask(TaskId),

    #[error("no tasks given")]
    NoTasks,

    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),

    #[error("unknown task id {0}")]
    UnknownTask(TaskId),

    #[error("task {0} was already unlearned")]
    AlreadyUnlearned(TaskId),

    #[error("no mask stored for task {0}")]
    MissingMask(TaskId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation `{op}` is not supported by method {method}")]
    Unsupported { op: &'static str, method: String },

    #[error("replay of task {0} diverged from its build-time task vector")]
    ReplayMismatch(TaskId),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
