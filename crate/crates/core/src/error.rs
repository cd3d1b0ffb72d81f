use std::path::PathBuf;

/// Errors produced by the semidense toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty valid set: no pixel with nonzero ground-truth depth")]
    EmptyValidSet,

    #[error("missing ground-truth depth")]
    MissingGroundTruth,

    #[error("size guard exceeded: {got} > {limit}")]
    SizeGuard { got: usize, limit: usize },

    #[error("spatial size {height}x{width} is not divisible by {factor}")]
    IndivisibleSize {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("unsupported image format in {path}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
