//! Encoder-decoder network with optional mask-driven decoder modulation.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod params;

pub use checkpoint::Checkpoint;
pub use graph::{BatchStats, Gradients, Graph, StatsMode, Var};
pub use model::{align_log_depth, log_to_depth, Model, ModelConfig, SizeTier, StageSpec, Variant, ENCODER_STRIDE};
pub use params::{BnId, ParamId, ParamRole, ParamStore};
