//! The trainable fusion network and its checkpoint format.

mod checkpoint;
pub mod layers;
mod model;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, TrainState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use model::{
    Ablation, Dropout, Forward, FusionDims, FusionModel, FusionOutput, Gradients, DROPOUT_P, EXPERTS, EXPERT_INPUTS,
    MODALITIES, PARAMETER_COUNT,
};
pub use params::{ParamSpec, Params};
