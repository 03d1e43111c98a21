use std::path::Path;

use ndarray::Array2;

use super::LabelSeq;
use crate::error::{Error, Result};
use crate::mel::FeatureMatrix;

/// What a codebook was fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookSource {
    LogMel,
    /// Hidden activations of encoder layer `n` (1-based).
    Hidden(u32),
}

impl CodebookSource {
    /// On-disk tag: 0 for log-Mel, the layer number for hidden activations.
    pub fn tag(self) -> u32 {
        match self {
            CodebookSource::LogMel => 0,
            CodebookSource::Hidden(l) => l,
        }
    }

    pub fn from_tag(tag: u32) -> Self {
        if tag == 0 {
            CodebookSource::LogMel
        } else {
            CodebookSource::Hidden(tag)
        }
    }
}

/// `k × D` centroid matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Array2<f32>,
    pub source: CodebookSource,
}

impl Codebook {
    pub fn new(centroids: Array2<f32>, source: CodebookSource) -> Result<Self> {
        if centroids.nrows() == 0 {
            return Err(Error::invalid("codebook needs at least one centroid"));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite centroid".into()));
        }
        Ok(Self { centroids, source })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// `MHKC` layout: magic, u32 k, u32 D, u32 source tag, then `k·D` f32
    /// row-major, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(16 + 4 * self.centroids.len());
        b.extend_from_slice(b"MHKC");
        b.extend_from_slice(&(self.k() as u32).to_le_bytes());
        b.extend_from_slice(&(self.feature_dim() as u32).to_le_bytes());
        b.extend_from_slice(&self.source.tag().to_le_bytes());
        for v in self.centroids.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != b"MHKC" {
            return Err(Error::format("codebook file", "missing MHKC header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (k, d, tag) = (u32_at(4), u32_at(8), u32_at(12) as u32);
        if bytes.len() != 16 + 4 * k * d {
            return Err(Error::format(
                "codebook file",
                format!("length {} does not match k={k}, D={d}", bytes.len()),
            ));
        }
        let vals = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let centroids = Array2::from_shape_vec((k, d), vals)
            .map_err(|e| Error::format("codebook file", e.to_string()))?;
        Codebook::new(centroids, CodebookSource::from_tag(tag))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub(crate) fn nearest(centroids: &Array2<f32>, frame: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d: f64 = row
            .iter()
            .zip(frame)
            .map(|(a, b)| {
                let x = *a as f64 - *b as f64;
                x * x
            })
            .sum();
        // Strict comparison keeps the lowest index on ties.
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Nearest-centroid (Euclidean) label per frame; ties go to the lowest index.
pub fn assign(cb: &Codebook, f: &FeatureMatrix) -> Result<LabelSeq> {
    if f.dim() != cb.feature_dim() {
        return Err(Error::shape(format!(
            "{}: feature dim {} does not match codebook dim {}",
            f.utt_id,
            f.dim(),
            cb.feature_dim()
        )));
    }
    let labels = f
        .data
        .rows()
        .into_iter()
        .map(|r| {
            let row = r.to_vec();
            nearest(&cb.centroids, &row).0 as u32
        })
        .collect();
    Ok(LabelSeq::new(f.utt_id.clone(), labels, f.frame_period_ms))
}

pub fn assign_all(cb: &Codebook, features: &[FeatureMatrix]) -> Result<Vec<LabelSeq>> {
    use rayon::prelude::*;
    features.par_iter().map(|f| assign(cb, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn exact_match_and_tie_break() {
        let cb = Codebook::new(
            array![
                [0.0f32, 0.0],
                [1.0, 0.0],
                [5.0, 5.0],
                [3.0, 3.0],
                [-1.0, 0.0]
            ],
            CodebookSource::LogMel,
        )
        .unwrap();
        let f = FeatureMatrix::new(array![[3.0f32, 3.0], [0.0, 0.0], [0.0, 0.5]], 10.0, "u");
        assert_eq!(assign(&cb, &f).unwrap().labels[..2], [3, 0]);
        // (0,1) is equidistant to centroids 1 and 4.
        let g = FeatureMatrix::new(array![[0.0f32, 1.0]], 10.0, "v");
        let cb2 = Codebook::new(
            array![
                [9.0f32, 9.0],
                [1.0, 1.0],
                [9.0, 8.0],
                [8.0, 9.0],
                [-1.0, 1.0]
            ],
            CodebookSource::LogMel,
        )
        .unwrap();
        assert_eq!(assign(&cb2, &g).unwrap().labels, vec![1]);
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = crate::rng::stream(5, "assign", &[]);
        let cb = Codebook::new(
            Array2::from_shape_fn((16, 8), |_| rng.random::<f32>()),
            CodebookSource::LogMel,
        )
        .unwrap();
        let f = FeatureMatrix::new(
            Array2::from_shape_fn((200, 8), |_| rng.random::<f32>()),
            10.0,
            "r",
        );
        let got = assign(&cb, &f).unwrap();
        for (t, row) in f.data.rows().into_iter().enumerate() {
            let dists: Vec<f64> = (0..16)
                .map(|c| {
                    (0..8)
                        .map(|j| ((row[j] - cb.centroids[[c, j]]) as f64).powi(2))
                        .sum()
                })
                .collect();
            let best = (0..16).fold(0, |b, c| if dists[c] < dists[b] { c } else { b });
            assert_eq!(got.labels[t] as usize, best);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let cb = Codebook::new(Array2::zeros((2, 3)), CodebookSource::LogMel).unwrap();
        let f = FeatureMatrix::new(Array2::zeros((2, 4)), 10.0, "x");
        assert!(assign(&cb, &f).is_err());
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = crate::rng::stream(6, "perm", &[]);
        let cents = Array2::from_shape_fn((6, 3), |_| rng.random::<f32>());
        let f = FeatureMatrix::new(
            Array2::from_shape_fn((50, 3), |_| rng.random::<f32>()),
            10.0,
            "p",
        );
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = Array2::from_shape_fn((6, 3), |(i, j)| cents[[perm[i], j]]);
        let a = assign(&Codebook::new(cents, CodebookSource::LogMel).unwrap(), &f).unwrap();
        let b = assign(
            &Codebook::new(permuted, CodebookSource::LogMel).unwrap(),
            &f,
        )
        .unwrap();
        for (x, y) in a.labels.iter().zip(&b.labels) {
            assert_eq!(perm[*y as usize], *x as usize);
        }
    }

    #[test]
    fn file_round_trip() {
        let cb = Codebook::new(
            array![[1.5f32, -2.0], [0.25, 8.0]],
            CodebookSource::Hidden(6),
        )
        .unwrap();
        let back = Codebook::from_bytes(&cb.to_bytes()).unwrap();
        assert_eq!(back, cb);
        assert_eq!(back.to_bytes(), cb.to_bytes());
        assert!(Codebook::from_bytes(&cb.to_bytes()[..20]).is_err());
    }
}
