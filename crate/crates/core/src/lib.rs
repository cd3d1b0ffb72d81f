//! Semi-dense indoor depth completion: mask-modulated encoder-decoder
//! network, pseudo-sensor corruption, losses, metrics and training.

pub mod corruption;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod oracles;
pub mod segment;
pub mod tensor;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, Tensor};
pub use types::{mask_from_depth, DepthMap, RgbImage, RgbdSample, ValidityMask};
