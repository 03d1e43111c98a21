use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossKind, MaskPolicy};

/// Model frame rate: raw 10 ms log-Mel, or pairs concatenated to 20 ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameVariant {
    #[serde(rename = "10ms")]
    Ms10,
    #[serde(rename = "20ms")]
    Ms20,
}

impl FrameVariant {
    pub fn factor(self) -> usize {
        match self {
            FrameVariant::Ms10 => 1,
            FrameVariant::Ms20 => 2,
        }
    }

    pub fn frame_period_ms(self) -> f32 {
        10.0 * self.factor() as f32
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameVariant::Ms10 => "10ms",
            FrameVariant::Ms20 => "20ms",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_utts: usize,
    pub accum_steps: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub dual_targets: bool,
    pub frame_variant: FrameVariant,
    pub mask: MaskPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_utts: 8,
            accum_steps: 4,
            epochs: 200,
            max_steps: None,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            loss: LossKind::Ce,
            dual_targets: false,
            frame_variant: FrameVariant::Ms20,
            mask: MaskPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch_utts * self.accum_steps
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            problems.push(format!("lr must be finite and >= 0 (got {})", self.lr));
        }
        if self.batch_utts == 0 {
            problems.push("batch_utts must be >= 1".to_string());
        }
        if self.accum_steps == 0 {
            problems.push("accum_steps must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            problems.push("adam betas must lie in [0, 1)".to_string());
        }
        if self.dual_targets && self.frame_variant == FrameVariant::Ms10 {
            problems.push("dual targets need the 20ms frame variant".to_string());
        }
        if let Err(e) = self.mask.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "train config: {}",
                problems.join("; ")
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage2Mode {
    Scratch,
    Continued,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagePlan {
    pub stage: Stage,
    pub stage2_mode: Stage2Mode,
    /// Encoder layer whose activations are quantized for stage-2 targets.
    pub target_layer: usize,
    pub stage2_k: usize,
}

impl Default for StagePlan {
    fn default() -> Self {
        Self {
            stage: Stage::One,
            stage2_mode: Stage2Mode::Scratch,
            target_layer: 6,
            stage2_k: 512,
        }
    }
}
