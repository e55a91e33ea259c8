//! Encoder-decoder summarizer whose encoder attends only along clipped
//! ancestor-descendant and sibling relations of the AST.
//!
//! Everything runs on the [`asttf_tensor::Tape`]; batches are packed row-wise
//! and attention is evaluated only on the allowed pairs.

pub mod batch;
pub mod checks;
mod config;
pub mod decoder;
pub mod encoder;
pub mod params;
pub mod train;

use asttf_tensor::TensorError;
use thiserror::Error;

pub use batch::{DecoderBatch, EncoderBatch, ModelInput};
pub use config::ModelConfig;
pub use params::Model;
pub use train::{batch_loss, decode_logits, encode, greedy_decode, loss_and_grads, StepStats, Trainer};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("decoder input of {len} tokens exceeds max_summary_len {max}")]
    Length { len: usize, max: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
