//! The multi-task network: a shared encoder whose features are split
//! between a depth decoder and a material decoder, a liveness classifier on
//! the full features, and a regressor that reads the light change between
//! two frames.

mod arch;
mod forward;
mod losses;
mod train;

pub use arch::{ArchConfig, ModelParams, RESIDUAL_DIM};
pub use forward::{cue_input, pair_input, Bound, CueHeads, ForwardOutput};
pub use losses::{
    light_residual, loss_classification, loss_reconstruction, loss_regression, loss_total,
    residual_encoding, LossComponents, LossWeights,
};
pub use train::{
    build_objective, downsample_labels, train, EpochRecord, TrainConfig, TrainOutput, TrainingVideo,
};
