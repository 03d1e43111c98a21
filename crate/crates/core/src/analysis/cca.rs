use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AlignmentFile;
use crate::error::{Error, Result};
use crate::mel::FeatureMatrix;
use crate::model::Model;
use crate::rng;

pub const MEL_CCA_MAX_FRAMES: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcaConfig {
    /// Eigen-directions of each covariance below `reg * largest eigenvalue`
    /// are discarded before whitening.
    pub reg: f64,
    /// Cap on the number of canonical correlations averaged.
    pub max_dims: Option<usize>,
}

impl Default for CcaConfig {
    fn default() -> Self {
        Self {
            reg: 1e-4,
            max_dims: None,
        }
    }
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Whitening basis `V Λ^{-1/2}` over the retained eigen-directions.
fn whitener(cov: &Array2<f64>, reg: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(to_na(cov));
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    if max <= 0.0 {
        return Err(Error::Numerical("covariance has rank 0".into()));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > reg * max)
        .collect();
    let d = cov.nrows();
    Ok(DMatrix::from_fn(d, keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])] / eig.eigenvalues[keep[c]].sqrt()
    }))
}

fn centered(x: &Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    x - &mean
}

/// Mean canonical correlation between the rows of `x` and `y`, in [0, 1].
///
/// Both sides are centered and whitened over their numerically retained
/// eigen-directions; the canonical correlations are the singular values of
/// the whitened cross-covariance, averaged over `min(rank_x, rank_y)`.
pub fn cca_score(x: &Array2<f64>, y: &Array2<f64>, cfg: &CcaConfig) -> Result<f64> {
    let (n, dx) = x.dim();
    let dy = y.ncols();
    if y.nrows() != n {
        return Err(Error::shape(format!("{n} rows vs {} rows", y.nrows())));
    }
    if n <= dx.max(dy) + 10 {
        return Err(Error::invalid(format!(
            "CCA needs more than {} samples for dims {dx} and {dy}, got {n}",
            dx.max(dy) + 10
        )));
    }
    if !(cfg.reg > 0.0) {
        return Err(Error::invalid("CCA reg must be > 0"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite CCA input".into()));
    }
    let (xc, yc) = (centered(x), centered(y));
    let scale = 1.0 / (n - 1) as f64;
    let cxx = xc.t().dot(&xc) * scale;
    let cyy = yc.t().dot(&yc) * scale;
    let cxy = yc.t().dot(&xc).reversed_axes() * scale;
    let wx = whitener(&cxx, cfg.reg)?;
    let wy = whitener(&cyy, cfg.reg)?;
    let m = wx.transpose() * to_na(&cxy) * &wy;
    let mut rho: Vec<f64> = m
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    rho.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut r = wx.ncols().min(wy.ncols());
    if let Some(cap) = cfg.max_dims {
        r = r.min(cap);
    }
    if r == 0 {
        return Err(Error::Numerical("no canonical directions".into()));
    }
    let score = rho.iter().take(r).sum::<f64>() / r as f64;
    if !score.is_finite() {
        return Err(Error::Numerical("CCA produced a non-finite score".into()));
    }
    Ok(score)
}

/// Every layer's activations, indexed `[layer][utterance]`; layer 0 is the
/// projected input ("feat").
pub fn layer_activations(
    model: &Model,
    inputs: &[FeatureMatrix],
) -> Result<Vec<Vec<FeatureMatrix>>> {
    let outs: Vec<Vec<FeatureMatrix>> = inputs
        .par_iter()
        .map(|f| {
            let o = model.forward(f, None)?;
            Ok(o.hidden
                .into_iter()
                .map(|h| FeatureMatrix::new(h, f.frame_period_ms, f.utt_id.clone()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let layers = model.encoder.n_layers + 1;
    let mut by_layer: Vec<Vec<FeatureMatrix>> = (0..layers)
        .map(|_| Vec::with_capacity(inputs.len()))
        .collect();
    for utt in outs {
        for (l, f) in utt.into_iter().enumerate() {
            by_layer[l].push(f);
        }
    }
    Ok(by_layer)
}

/// CCA between segment-mean activations and one-hot phone identity, per
/// layer. Alignments are converted to the activation frame period.
pub fn phone_cca(
    layers: &[Vec<FeatureMatrix>],
    alignments: &AlignmentFile,
    cfg: &CcaConfig,
) -> Result<Vec<f64>> {
    let num_phones = alignments.num_phones();
    layers
        .par_iter()
        .map(|utts| {
            let period = utts
                .first()
                .map_or(alignments.frame_period_ms, |f| f.frame_period_ms as f64);
            let ali = alignments.at_frame_period(period)?;
            let mut xs: Vec<f64> = Vec::new();
            let mut phones = Vec::new();
            let mut dim = 0;
            for f in utts {
                dim = f.dim();
                let Some(a) = ali.get(&f.utt_id) else {
                    return Err(Error::invalid(format!("no alignment for {}", f.utt_id)));
                };
                for s in &a.segments {
                    let end = s.end_frame.min(f.num_frames());
                    if s.start_frame >= end {
                        continue;
                    }
                    let seg = f.data.slice(ndarray::s![s.start_frame..end, ..]);
                    let mean = seg
                        .mapv(|v| v as f64)
                        .mean_axis(Axis(0))
                        .expect("non-empty");
                    xs.extend(mean.iter());
                    phones.push(s.phone_id as usize);
                }
            }
            let n = phones.len();
            let x = Array2::from_shape_vec((n, dim), xs).expect("sized");
            let mut y = Array2::<f64>::zeros((n, num_phones));
            for (i, &p) in phones.iter().enumerate() {
                y[[i, p]] = 1.0;
            }
            cca_score(&x, &y, cfg)
        })
        .collect()
}

/// CCA between frame activations and the model input frames, per layer.
/// At most `max_frames` frames are used, drawn uniformly with `seed`.
pub fn mel_cca(
    layers: &[Vec<FeatureMatrix>],
    mels: &[FeatureMatrix],
    cfg: &CcaConfig,
    max_frames: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let stack = |fs: &[FeatureMatrix]| -> Result<Array2<f64>> {
        let dim = fs.first().map_or(0, |f| f.dim());
        let views: Vec<_> = fs.iter().map(|f| f.data.view()).collect();
        if fs.iter().any(|f| f.dim() != dim) {
            return Err(Error::shape("inconsistent feature dims"));
        }
        Ok(ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape(e.to_string()))?
            .mapv(|v| v as f64))
    };
    let y = stack(mels)?;
    let total = y.nrows();
    let pick: Option<Vec<usize>> = (total > max_frames).then(|| {
        let mut r = rng::stream(seed, "mel-cca", &[]);
        let mut idx = rand::seq::index::sample(&mut r, total, max_frames).into_vec();
        idx.sort_unstable();
        idx
    });
    let y = match &pick {
        Some(idx) => y.select(Axis(0), idx),
        None => y,
    };
    layers
        .par_iter()
        .map(|utts| {
            for (a, m) in utts.iter().zip(mels) {
                if a.num_frames() != m.num_frames() || a.utt_id != m.utt_id {
                    return Err(Error::shape(format!(
                        "{} does not line up with {}",
                        a.utt_id, m.utt_id
                    )));
                }
            }
            if utts.len() != mels.len() {
                return Err(Error::shape("activation and Mel utterance counts differ"));
            }
            let x = stack(utts)?;
            let x = match &pick {
                Some(idx) => x.select(Axis(0), idx),
                None => x,
            };
            cca_score(&x, &y, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, "test", &[]);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut r))
    }

    #[test]
    fn self_similarity_is_one() {
        let x = gaussian(500, 6, 1);
        let s = cca_score(&x, &x, &CcaConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn guard_and_shape_errors() {
        let x = gaussian(15, 6, 1);
        assert!(cca_score(&x, &x, &CcaConfig::default()).is_err());
        let y = gaussian(16, 2, 2);
        let x = gaussian(17, 2, 2);
        assert!(cca_score(&x, &y, &CcaConfig::default()).is_err());
        let z = Array2::zeros((100, 3));
        assert!(cca_score(&gaussian(100, 3, 3), &z, &CcaConfig::default()).is_err());
    }
}
