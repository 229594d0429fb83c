//! Network building blocks, the two backbones, the multi-input fusion model
//! and its checkpoint format.

mod blocks;
mod checkpoint;
mod model;

pub use blocks::{
    build_inverted_residual, build_mobilenet_lite, build_vgg_lite, Backbone, BackboneKind, InvertedResidual,
    InvertedResidualSpec, ParamStore, MOBILENET_LITE_STAGES,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, StoredTensor, TensorData, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{build_multi_input, build_single_input, param_count, Arch, Model, ModelSpec, DEFAULT_HIDDEN, NUM_CLASSES};

/// Batch-norm running-average momentum (weight kept on the old value).
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
