//! The multiscale high-resolution network.

mod config;
pub mod layers;
mod model;
mod params;

pub use config::{BlockKind, BranchSpec, NetworkConfig, StageSpec, OUTPUT_CHANNELS};
pub use layers::{channelwise_weights, rescale, Ctx, LayerBuilder};
pub use model::{split_heatmaps, HeadOutput, Network};
pub use params::{Bound, BufferId, GradMode, Param, ParamId, ParamStore};
