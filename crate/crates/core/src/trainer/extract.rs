use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mel::FeatureMatrix;
use crate::model::Model;
use crate::quantizer::{assign_all, kmeans_fit, Codebook, CodebookSource, KMeansConfig, LabelSeq};

/// Activations of encoder layer `layer` (1-based) for every input, with
/// dropout off and nothing masked.
pub fn extract_hidden(
    model: &Model,
    inputs: &[FeatureMatrix],
    layer: usize,
) -> Result<Vec<FeatureMatrix>> {
    let n = model.encoder.n_layers;
    if layer == 0 || layer > n {
        return Err(Error::invalid(format!("layer {layer} outside 1..={n}")));
    }
    inputs
        .par_iter()
        .map(|f| {
            let mut out = model.forward(f, None)?;
            Ok(FeatureMatrix::new(
                out.hidden.swap_remove(layer),
                f.frame_period_ms,
                f.utt_id.clone(),
            ))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Relabeled {
    pub codebook: Codebook,
    pub labels: Vec<LabelSeq>,
}

/// Quantizes layer activations into new targets at the model frame rate.
pub fn relabel(
    model: &Model,
    inputs: &[FeatureMatrix],
    layer: usize,
    k: usize,
    seed: u64,
    max_frames: Option<usize>,
) -> Result<Relabeled> {
    let hidden = extract_hidden(model, inputs, layer)?;
    let mut cfg = KMeansConfig::new(k, seed);
    cfg.max_frames = max_frames;
    cfg.source = CodebookSource::Hidden(layer as u32);
    let fit = kmeans_fit(&hidden, &cfg)?;
    let labels = assign_all(&fit.codebook, &hidden)?;
    Ok(Relabeled {
        codebook: fit.codebook,
        labels,
    })
}
