use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension global mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Running moments for one block of frames.
#[derive(Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn of(f: &FeatureMatrix) -> Self {
        let d = f.dim();
        let n = f.num_frames() as f64;
        let mut mean = vec![0.0; d];
        for row in f.data.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        if n > 0.0 {
            mean.iter_mut().for_each(|m| *m /= n);
        }
        let mut m2 = vec![0.0; d];
        for row in f.data.rows() {
            for ((s, &v), m) in m2.iter_mut().zip(row).zip(&mean) {
                let dv = v as f64 - m;
                *s += dv * dv;
            }
        }
        Self { count: n, mean, m2 }
    }

    // Chan et al. pairwise combination.
    fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0.0 {
            return other.clone();
        }
        if other.count == 0.0 {
            return self.clone();
        }
        let n = self.count + other.count;
        let mut mean = Vec::with_capacity(self.mean.len());
        let mut m2 = Vec::with_capacity(self.mean.len());
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            mean.push(self.mean[i] + delta * other.count / n);
            m2.push(self.m2[i] + other.m2[i] + delta * delta * self.count * other.count / n);
        }
        Moments { count: n, mean, m2 }
    }
}

fn tree_merge(parts: &[Moments]) -> Moments {
    match parts.len() {
        1 => parts[0].clone(),
        n => {
            let (l, r) = parts.split_at(n / 2);
            tree_merge(l).merge(&tree_merge(r))
        }
    }
}

/// Global statistics over every frame of every utterance.
///
/// Per-utterance moments are computed independently and merged pairwise in a
/// fixed tree over utterance order, so the result does not depend on how the
/// work is scheduled.
pub fn estimate_norm_stats(features: &[FeatureMatrix]) -> Result<NormStats> {
    use rayon::prelude::*;
    let dim = features.first().map(FeatureMatrix::dim).unwrap_or(0);
    if let Some(f) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::shape(format!(
            "{} has dim {}, expected {dim}",
            f.utt_id,
            f.dim()
        )));
    }
    let parts: Vec<Moments> = features.par_iter().map(Moments::of).collect();
    if parts.iter().map(|p| p.count).sum::<f64>() == 0.0 {
        return Err(Error::invalid(
            "cannot estimate normalization statistics from zero frames",
        ));
    }
    let total = tree_merge(&parts);
    let std = total
        .m2
        .iter()
        .map(|s| (s / total.count).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats {
        mean: total.mean,
        std,
    })
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        if f.dim() != self.dim() {
            return Err(Error::shape(format!(
                "{}: features have dim {}, stats have {}",
                f.utt_id,
                f.dim(),
                self.dim()
            )));
        }
        let mut out = f.clone();
        for mut row in out.data.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: NormStats =
            serde_json::from_str(s).map_err(|e| Error::format("norm stats", e.to_string()))?;
        if stats.mean.len() != stats.std.len() || stats.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::format(
                "norm stats",
                "mean/std lengths differ or std not positive",
            ));
        }
        Ok(stats)
    }
}
