use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskPolicy {
    /// Probability that a frame starts a masked span.
    pub mask_start_prob: f64,
    /// Span length in model frames.
    pub span_len: usize,
    pub min_masked_frames: usize,
    /// Name of the random stream masks are drawn from.
    pub stream: String,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            mask_start_prob: 0.08,
            span_len: 10,
            min_masked_frames: 1,
            stream: "mask".into(),
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_start_prob >= 0.0 && self.mask_start_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "mask_start_prob {} outside [0, 1]",
                self.mask_start_prob
            )));
        }
        if self.span_len == 0 {
            return Err(Error::invalid("span_len must be >= 1"));
        }
        Ok(())
    }
}

/// Sorted indices of masked frames for a sequence of `num_frames` frames.
///
/// Each frame starts a span with probability `mask_start_prob`; spans are
/// clipped at the end of the sequence. Random extra spans are added while
/// fewer than `min_masked_frames` frames are masked.
pub fn sample_mask(num_frames: usize, policy: &MaskPolicy, rng: &mut impl Rng) -> Vec<usize> {
    if num_frames == 0 {
        return Vec::new();
    }
    let mut masked = vec![false; num_frames];
    let mark = |masked: &mut [bool], start: usize| {
        for m in masked.iter_mut().skip(start).take(policy.span_len) {
            *m = true;
        }
    };
    for t in 0..num_frames {
        if rng.random::<f64>() < policy.mask_start_prob {
            mark(&mut masked, t);
        }
    }
    let want = policy.min_masked_frames.min(num_frames);
    while masked.iter().filter(|m| **m).count() < want {
        let start = rng.random_range(0..num_frames);
        mark(&mut masked, start);
    }
    masked
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect()
}
