//! Model architecture configuration.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Text,
    Acoustic,
    Multimodal,
}

/// Architecture dimensions. The defaults are a desk-scale configuration that
/// trains from scratch in minutes while exercising the same code paths as
/// the full-scale setting (12 layers / 12 heads / 768 hidden / feed-forward
/// 3072), which remains expressible through the same fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub text_layers: usize,
    pub text_heads: usize,
    pub text_hidden: usize,
    /// Feed-forward width inside each encoder block.
    pub text_ff: usize,
    /// Dimension of the projected text representation fed to fusion.
    pub repr_dim: usize,
    pub acoustic_input_dim: usize,
    pub acoustic_hidden: usize,
    pub acoustic_layers: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    /// Set from the tokenizer when the model is constructed.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_layers: 2,
            text_heads: 2,
            text_hidden: 32,
            text_ff: 128,
            repr_dim: 256,
            acoustic_input_dim: 88,
            acoustic_hidden: 256,
            acoustic_layers: 4,
            max_seq_len: 128,
            dropout: 0.1,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.text_heads == 0 || self.text_hidden % self.text_heads != 0 {
            return Err(CoreError::Config(format!(
                "text_hidden {} must be divisible by text_heads {}",
                self.text_hidden, self.text_heads
            )));
        }
        if self.max_seq_len == 0 {
            return Err(CoreError::Config("max_seq_len must be >= 1".into()));
        }
        for (name, v) in [
            ("text_layers", self.text_layers),
            ("text_hidden", self.text_hidden),
            ("text_ff", self.text_ff),
            ("repr_dim", self.repr_dim),
            ("acoustic_input_dim", self.acoustic_input_dim),
            ("acoustic_hidden", self.acoustic_hidden),
            ("acoustic_layers", self.acoustic_layers),
        ] {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.vocab_size < 2 {
            return Err(CoreError::Config(
                "vocab_size must cover at least the reserved ids".into(),
            ));
        }
        Ok(())
    }
}
