//! Miniature Vision Transformer: patch embedding, class token, positional
//! embedding, pre-norm encoder blocks and a linear classifier head.

mod config;
mod embedding;
mod model;
mod params;

pub use config::{NormPlacement, ViTConfig, PROFILES};
pub use embedding::{extract, EmbeddingSet};
pub use model::{
    bind, classify, embed_sequence, encoder_block, forward, forward_batch, infer,
    multi_head_attention, patchify, patchify_batch, BoundBlock, BoundParams, Forward,
};
pub use params::{config_of, decays, param_count, param_shapes, BlockWeights, ViTParams, VitWeights};
