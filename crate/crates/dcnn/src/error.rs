use thiserror::Error;

/// Errors from the network, its checkpoints and the training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weight tensor `{name}` has shape {got:?}, expected {expected:?}")]
    WeightShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("pooling needs even dimensions, got {height}x{width}")]
    OddDimension { height: usize, width: usize },

    #[error("feature cache was built with other weights (generation {cached}, current {current})")]
    StaleCache { cached: u64, current: u64 },

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint config {found} does not match expected {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("learning-rate progress {progress} outside [0, {total})")]
    OutOfRange { progress: f64, total: f64 },

    #[error("non-finite loss on record {record}")]
    NonFiniteLoss { record: usize },

    #[error("record {record}: {reason}")]
    DataShapeMismatch { record: usize, reason: String },

    #[error(transparent)]
    Core(#[from] gridbary_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
