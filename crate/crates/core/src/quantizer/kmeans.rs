use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use super::{Codebook, CodebookSource};
use crate::error::{Error, Result};
use crate::mel::FeatureMatrix;
use crate::rng;

/// Frames per work unit. Fixed so that partial sums are reduced in the same
/// order whatever the thread count.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative distortion improvement falls below this.
    pub tol: f64,
    /// Uniformly subsample to at most this many frames before fitting.
    pub max_frames: Option<usize>,
    pub source: CodebookSource,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
            max_frames: None,
            source: CodebookSource::LogMel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Total squared distortion after each assignment step.
    pub distortion: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

impl KMeansFit {
    pub fn final_distortion(&self) -> f64 {
        *self.distortion.last().unwrap_or(&0.0)
    }
}

fn gather(features: &[FeatureMatrix], cfg: &KMeansConfig) -> Result<Array2<f64>> {
    let dim = features.first().map(FeatureMatrix::dim).unwrap_or(0);
    let total: usize = features.iter().map(FeatureMatrix::num_frames).sum();
    for f in features {
        if f.dim() != dim {
            return Err(Error::shape(format!(
                "{} has dim {}, expected {dim}",
                f.utt_id,
                f.dim()
            )));
        }
        if !f.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite feature value in {}",
                f.utt_id
            )));
        }
    }
    let keep: Option<Vec<usize>> = match cfg.max_frames {
        Some(m) if total > m => {
            let mut r = rng::stream(cfg.seed, "kmeans-subsample", &[]);
            let mut idx = rand::seq::index::sample(&mut r, total, m).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    };
    let rows: Vec<&[f32]> = features
        .iter()
        .flat_map(|f| {
            f.data
                .as_slice()
                .expect("standard layout")
                .chunks_exact(dim.max(1))
                .take(f.num_frames())
        })
        .collect();
    let picked: Vec<&[f32]> = match keep {
        Some(idx) => idx.into_iter().map(|i| rows[i]).collect(),
        None => rows,
    };
    Ok(Array2::from_shape_fn((picked.len(), dim), |(i, j)| {
        picked[i][j] as f64
    }))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Array2<f64>, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.outer_iter().enumerate() {
        let d = sq_dist(row.as_slice().unwrap(), x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .outer_iter()
        .map(|p| sq_dist(p.as_slice().unwrap(), centroids.row(0).as_slice().unwrap()))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        let cr = centroids.row(c).to_owned();
        let cs = cr.as_slice().unwrap();
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let p = points.row(i);
            let nd = sq_dist(p.as_slice().unwrap(), cs);
            if nd < *d {
                *d = nd;
            }
        });
    }
    centroids
}

struct Partial {
    sums: Array2<f64>,
    counts: Vec<usize>,
    distortion: f64,
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Empty clusters are re-seeded with the frame farthest from its centroid.
/// Deterministic given the seed and the frame order.
pub fn kmeans_fit(features: &[FeatureMatrix], cfg: &KMeansConfig) -> Result<KMeansFit> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let points = gather(features, cfg)?;
    let (n, dim) = points.dim();
    if n < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k={k} frames, got {n}"
        )));
    }
    let mut rng = rng::stream(cfg.seed, "kmeans-init", &[]);
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut history = Vec::new();
    let mut reseeded = 0;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;
        let partials: Vec<Partial> = labels
            .par_chunks_mut(CHUNK)
            .zip(dists.par_chunks_mut(CHUNK))
            .enumerate()
            .map(|(ci, (lab, dst))| {
                let mut p = Partial {
                    sums: Array2::zeros((k, dim)),
                    counts: vec![0; k],
                    distortion: 0.0,
                };
                for (j, (l, d)) in lab.iter_mut().zip(dst.iter_mut()).enumerate() {
                    let x = points.row(ci * CHUNK + j);
                    let xs = x.as_slice().unwrap();
                    let (c, dd) = nearest(&centroids, xs);
                    *l = c;
                    *d = dd;
                    p.counts[c] += 1;
                    p.distortion += dd;
                    let mut row = p.sums.row_mut(c);
                    row += &x;
                }
                p
            })
            .collect();
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        let mut distortion = 0.0;
        for p in &partials {
            sums += &p.sums;
            for (c, n) in counts.iter_mut().zip(&p.counts) {
                *c += n;
            }
            distortion += p.distortion;
        }
        let prev = history.last().copied();
        history.push(distortion);

        let converged = match prev {
            Some(prev) if prev > 0.0 => (prev - distortion) / prev < cfg.tol,
            Some(_) => true,
            None => distortion == 0.0,
        };
        if converged {
            break;
        }

        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                let inv = 1.0 / cnt as f64;
                centroids.row_mut(c).assign(&(&sums.row(c) * inv));
            }
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt == 0 {
                // Farthest frame from its own centroid; lowest index on ties.
                let far = (0..n).fold(0, |b, i| if dists[i] > dists[b] { i } else { b });
                centroids.row_mut(c).assign(&points.row(far));
                dists[far] = 0.0;
                reseeded += 1;
            }
        }
    }

    let codebook = Codebook::new(centroids.mapv(|v| v as f32), cfg.source)?;
    Ok(KMeansFit {
        codebook,
        distortion: history,
        iterations,
        reseeded,
    })
}
