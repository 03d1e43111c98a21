use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;

use super::{make_targets, FrameVariant};
use crate::error::{Error, Result};
use crate::mel::{concat_frames, FeatureMatrix, NormStats};
use crate::quantizer::LabelSeq;

/// One training utterance at the model frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainUtt {
    pub utt_id: String,
    pub input: Array2<f32>,
    /// One label stream per prediction head, each `input.nrows()` long.
    pub targets: Vec<Vec<u32>>,
}

impl TrainUtt {
    pub fn num_frames(&self) -> usize {
        self.input.nrows()
    }
}

/// Normalizes 10 ms log-Mel features and reshapes them to the model rate.
pub fn model_inputs(
    features10: &[FeatureMatrix],
    norm: &NormStats,
    variant: FrameVariant,
) -> Result<Vec<FeatureMatrix>> {
    features10
        .par_iter()
        .map(|f| {
            let n = norm.apply(f)?;
            match variant {
                FrameVariant::Ms10 => Ok(n),
                FrameVariant::Ms20 => concat_frames(&n, 2),
            }
        })
        .collect()
}

fn by_id(labels: &[LabelSeq]) -> HashMap<&str, &LabelSeq> {
    labels.iter().map(|l| (l.utt_id.as_str(), l)).collect()
}

/// Stage-1 examples from raw 10 ms features and 10 ms k-means labels.
pub fn stage1_examples(
    features10: &[FeatureMatrix],
    norm: &NormStats,
    labels10: &[LabelSeq],
    variant: FrameVariant,
    dual: bool,
) -> Result<Vec<TrainUtt>> {
    let inputs = model_inputs(features10, norm, variant)?;
    let labels = by_id(labels10);
    features10
        .iter()
        .zip(inputs)
        .map(|(f10, input)| {
            let l = labels
                .get(f10.utt_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no labels for {}", f10.utt_id)))?;
            let targets = make_targets(l, variant, dual, f10.num_frames())?;
            Ok(TrainUtt {
                utt_id: input.utt_id.clone(),
                input: input.data,
                targets: targets.into_iter().map(|t| t.labels).collect(),
            })
        })
        .collect()
}

/// Stage-2 examples: model-rate inputs paired with model-rate labels.
pub fn stage2_examples(inputs: &[FeatureMatrix], labels: &[LabelSeq]) -> Result<Vec<TrainUtt>> {
    let labels = by_id(labels);
    inputs
        .iter()
        .map(|f| {
            let l = labels
                .get(f.utt_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no labels for {}", f.utt_id)))?;
            if l.len() != f.num_frames() {
                return Err(Error::shape(format!(
                    "{}: {} labels for {} frames",
                    f.utt_id,
                    l.len(),
                    f.num_frames()
                )));
            }
            Ok(TrainUtt {
                utt_id: f.utt_id.clone(),
                input: f.data.clone(),
                targets: vec![l.labels.clone()],
            })
        })
        .collect()
}
