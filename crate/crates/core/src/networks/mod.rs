//! The three autoencoder variants and their block-coordinate training loop.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, BlockEntry, CheckpointHeader,
    CHECKPOINT_VERSION,
};
pub use config::{Hyper, LayerSpec, ModelConfig, Variant, MAX_ENCODER_LAYERS, MIN_ENCODER_LAYERS};
pub use model::{
    build_model, encode, forward, self_express, Branch, ConvLayer, ForwardCache,
    MultiBranchAutoencoder, ParamBlock,
};
pub(crate) use model::{
    branch_forward, concat_codes, decode_map, decode_map_adjoint, rows_to_map, run_decoder,
    split_codes,
};
pub use train::{train, train_from, TrainReport, TrainState, STALL_WINDOW};
