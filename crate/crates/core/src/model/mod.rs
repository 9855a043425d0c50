//! Small text-to-text encoder-decoder network.

mod batch;
mod checkpoint;
mod config;
mod params;
mod transformer;
mod vocab;

pub use batch::{terminate, Batch};
pub use checkpoint::{Checkpoint, Provenance};
pub use config::ModelConfig;
pub use params::{init_params, layout, BoundParams, Layout, Parameters};
pub use transformer::{forward_loss, greedy_decode, loss_and_grad, loss_value};
pub use vocab::{Tokenization, Vocabulary, BOS, EOS, PAD, UNK};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("batch has no target tokens")]
    EmptyTarget,
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decodes `input` text greedily and renders the result as text.
pub fn predict<T: crate::autodiff::Real>(
    params: &Parameters<T>,
    config: &ModelConfig,
    vocab: &Vocabulary,
    input: &str,
) -> Result<String, ModelError> {
    let ids = greedy_decode(params, config, &vocab.encode(input))?;
    Ok(vocab.decode(&ids))
}
