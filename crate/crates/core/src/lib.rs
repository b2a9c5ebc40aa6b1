//! Multimodal emotion recognition in conversation.
//!
//! Utterance features from three modalities are aligned with co-attention
//! transformers, threaded through a bidirectional GRU, refined on a windowed
//! speaker-aware dialogue graph and decoded with a coarse/fine multi-task head.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier_loss;
pub mod context_gru;
pub mod data;
pub mod dialogue_graph;
pub mod encoder_cam;
pub mod error;
pub mod numerics;
pub mod train_eval;

pub use error::{Error, Result};
