use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Unnormalized layer logits; the effective weights are their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub logits: Vec<f64>,
}

impl LayerWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            logits: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        let max = self
            .logits
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// `layer,weight` rows, one per layer.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("layer,weight\n");
        for (n, w) in names.iter().zip(self.weights()) {
            s.push_str(&format!("{n},{w}\n"));
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(names)).map_err(|e| Error::io(path, e))
    }
}

/// `Σ_l softmax(logits)_l · hidden_l`.
pub fn weighted_sum(hidden: &[Array2<f32>], w: &LayerWeights) -> Result<Array2<f32>> {
    if hidden.len() != w.len() || hidden.is_empty() {
        return Err(Error::shape(format!(
            "{} layers for {} weights",
            hidden.len(),
            w.len()
        )));
    }
    let shape = hidden[0].dim();
    if let Some(h) = hidden.iter().find(|h| h.dim() != shape) {
        return Err(Error::shape(format!(
            "layer shape {:?} differs from {shape:?}",
            h.dim()
        )));
    }
    let mut out = Array2::<f64>::zeros(shape);
    for (h, wt) in hidden.iter().zip(w.weights()) {
        out.zip_mut_with(h, |o, &v| *o += wt * v as f64);
    }
    Ok(out.mapv(|v| v as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn saturated_logit_selects_layer() {
        let h = vec![
            array![[1.0f32, 2.0]],
            array![[-3.0f32, 0.5]],
            array![[7.0f32, 7.0]],
        ];
        let w = LayerWeights {
            logits: vec![0.0, 30.0, 0.0],
        };
        let out = weighted_sum(&h, &w).unwrap();
        for (a, b) in out.iter().zip(h[1].iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let mean = weighted_sum(&h, &LayerWeights::uniform(3)).unwrap();
        assert!((mean[[0, 0]] - 5.0 / 3.0).abs() < 1e-6);
        assert!((mean[[0, 1]] - 9.5 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        let h = vec![array![[1.0f32, 2.0]], array![[1.0f32]]];
        assert!(weighted_sum(&h, &LayerWeights::uniform(2)).is_err());
        assert!(weighted_sum(&h[..1], &LayerWeights::uniform(2)).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let w = LayerWeights {
            logits: vec![-2.0, 0.3, 5.0, 1e3],
        };
        assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
