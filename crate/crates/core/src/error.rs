use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: String, details: String },

    #[error("{op}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        op: String,
        expected: usize,
        got: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite input to {0}")]
    NonFinite(String),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("unknown selection mode: {0}")]
    UnknownMode(String),

    #[error("unknown candidate operation: {0}")]
    UnknownOp(String),

    #[error("retained inputs T={t} exceeds predecessor count {preds} of node {node}")]
    RetainTooLarge { t: usize, preds: usize, node: usize },

    #[error("search space too large: {count} cells exceeds cap {cap}; reduce B, K or T")]
    EnumerationCapExceeded { count: u128, cap: u128 },

    #[error("non-finite loss at iteration {iter} ({context})")]
    NonFiniteLoss { iter: u64, context: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown export format: {0}")]
    UnknownFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
