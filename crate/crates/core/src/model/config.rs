use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer shape. `vocab_size` comes from the corpus vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Probability of replacing a training prompt by the null prompt.
    pub prompt_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 12,
            d_model: 64,
            num_heads: 4,
            ffn_dim: 256,
            vocab_size: 0,
            max_seq: 160,
            prompt_dropout: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.num_layers,
            self.d_model,
            self.num_heads,
            self.ffn_dim,
            self.vocab_size,
            self.max_seq,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid(format!("model dimensions must be >= 1: {self:?}")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Invalid(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.prompt_dropout) {
            return Err(Error::Invalid(format!("prompt_dropout {} outside [0,1]", self.prompt_dropout)));
        }
        Ok(())
    }
}

/// Sampling settings for [`generate`](super::generate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    /// Classifier-free guidance scale γ.
    pub cfg_scale: f64,
    pub seed: u64,
    /// END is only admitted after this many complete events.
    pub min_events: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 96,
            temperature: 1.0,
            top_k: 0,
            cfg_scale: 3.0,
            seed: 0,
            min_events: crate::corpus::clip::MIN_EVENTS,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Invalid(format!("temperature {} must be > 0", self.temperature)));
        }
        if !(self.cfg_scale >= 0.0) {
            return Err(Error::Invalid(format!("cfg_scale {} must be >= 0", self.cfg_scale)));
        }
        Ok(())
    }
}
