use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape of the encoder-decoder network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embed_dim: 64,
            hidden_dim: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            max_input_len: 64,
            max_output_len: 32,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("heads", self.heads),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 5 {
            return Err(ModelError::Config("vocab_size must exceed the 4 reserved ids".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}
