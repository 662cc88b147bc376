use thiserror::Error;

/// Errors raised across the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid screen config: {0}")]
    InvalidScreenConfig(String),

    #[error("task generation failed for seed {seed}: {reason}")]
    Generation { seed: u64, reason: String },

    #[error("coordinate out of domain: {0}")]
    Domain(String),

    #[error("empty seed range")]
    EmptyRange,

    #[error("invalid split ratios ({train}, {eval})")]
    InvalidRatios { train: f64, eval: f64 },

    #[error("distribution has a non-positive entry at index {index}; floor it first")]
    UnflooredDistribution { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parameter shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },

    #[error("checkpoint config hash mismatch: checkpoint {found}, config {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("metrics file: {0}")]
    Metrics(String),

    #[error("metrics line {line}: {reason}")]
    MetricsRow { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
