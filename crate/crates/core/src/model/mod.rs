//! The encoder: input projection, span masking with a learned embedding,
//! pre-norm Transformer blocks, and the cosine-similarity and plain
//! cross-entropy prediction heads.

mod encoder;
mod heads;
mod mask;
mod params;

pub use encoder::{EncoderOutput, Model};
pub use heads::{
    ce_loss_sum, cosine_loss_sum, loss_ce, loss_cosine, CodebookInit, HeadConfig, LossKind,
};
pub use mask::{sample_mask, MaskPolicy};
pub use params::ParamSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_positions: usize,
}

impl Default for EncoderConfig {
    /// Desk-scale encoder for 20 ms frames of 40-band log-Mel.
    fn default() -> Self {
        Self {
            input_dim: 80,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 256,
            dropout: 0.1,
            max_positions: 512,
        }
    }
}

impl EncoderConfig {
    /// HuBERT-base sized encoder (12 × 768, 12 heads).
    pub fn base(input_dim: usize) -> Self {
        Self {
            input_dim,
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            ffn_dim: 3072,
            dropout: 0.1,
            max_positions: 4096,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_dim == 0 || self.d_model == 0 || self.ffn_dim == 0 || self.max_positions == 0
        {
            problems.push("dimensions must be positive".to_string());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            problems.push(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "encoder config: {}",
                problems.join("; ")
            )))
        }
    }

    /// Parameter count of the encoder alone:
    ///
    /// * input projection `input_dim·d + d`, mask embedding `d`,
    ///   positional table `max_positions·d`;
    /// * per block: two layer norms `4d`, Q/K/V/O `4(d² + d)`,
    ///   feed-forward `d·ffn + ffn + ffn·d + d`;
    /// * final layer norm `2d`.
    pub fn num_params(&self) -> usize {
        let d = self.d_model;
        let f = self.ffn_dim;
        let block = 4 * d + 4 * (d * d + d) + (d * f + f + f * d + d);
        self.input_dim * d + d + d + self.max_positions * d + self.n_layers * block + 2 * d
    }
}
