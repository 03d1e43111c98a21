use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::corpus::WaveBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            win_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 40,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.sample_rate_hz == 0 {
            problems.push("sample_rate_hz must be positive".to_string());
        }
        if !(self.hop_ms > 0.0) || self.hop_ms > self.win_ms {
            problems.push(format!(
                "need 0 < hop_ms <= win_ms (got {} / {})",
                self.hop_ms, self.win_ms
            ));
        }
        if self.win_samples() > self.n_fft {
            problems.push(format!(
                "window of {} samples exceeds n_fft {}",
                self.win_samples(),
                self.n_fft
            ));
        }
        if self.n_mels == 0 {
            problems.push("n_mels must be positive".into());
        }
        if self.fmax_hz > self.sample_rate_hz as f64 / 2.0
            || self.fmin_hz < 0.0
            || self.fmin_hz >= self.fmax_hz
        {
            problems.push(format!(
                "need 0 <= fmin < fmax <= sample_rate/2 (got {}..{})",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if !(self.log_floor > 0.0) {
            problems.push("log_floor must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "mel config: {}",
                problems.join("; ")
            )))
        }
    }

    /// Number of frames for `num_samples` input samples (no centering/padding).
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let win = self.win_samples();
        if num_samples < win {
            0
        } else {
            1 + (num_samples - win) / self.hop_samples()
        }
    }
}

/// HTK Mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over power-spectrum bins, peak weight 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// n_mels × (n_fft/2 + 1)
    pub weights: Array2<f64>,
    pub center_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let w = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                weights[[m, b]] = w;
            }
        }
        Self {
            weights,
            center_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }
}

struct Extractor {
    cfg: MelConfig,
    window: Vec<f64>,
    bank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl Extractor {
    fn new(cfg: &MelConfig) -> Self {
        let win = cfg.win_samples();
        // Periodic Hann.
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            cfg: cfg.clone(),
            window,
            bank: MelFilterbank::new(cfg),
            fft,
        }
    }

    fn run(&self, samples: &[f32]) -> Array2<f32> {
        let cfg = &self.cfg;
        let t = cfg.num_frames(samples.len());
        let hop = cfg.hop_samples();
        let n_bins = cfg.n_fft / 2 + 1;
        let mut out = Array2::zeros((t, cfg.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        for frame in 0..t {
            let start = frame * hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = match self.window.get(i) {
                    Some(w) => Complex::new(samples[start + i] as f64 * w, 0.0),
                    None => Complex::new(0.0, 0.0),
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..cfg.n_mels {
                let e: f64 = self
                    .bank
                    .weights
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                out[[frame, m]] = e.max(cfg.log_floor).ln() as f32;
            }
        }
        out
    }
}

/// Log-Mel energies: Hann window, power spectrum, HTK triangular filterbank,
/// natural log with a floor. Utterances shorter than one window yield `T = 0`.
pub fn compute_logmel(wave: &WaveBuffer, cfg: &MelConfig, utt_id: &str) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if wave.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::invalid(format!(
            "sample rate {} does not match mel config {}",
            wave.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    let data = Extractor::new(cfg).run(&wave.samples);
    Ok(FeatureMatrix::new(data, cfg.hop_ms as f32, utt_id))
}

/// Extracts features for many utterances in parallel, preserving order.
pub fn compute_logmel_batch(
    waves: &[(String, WaveBuffer)],
    cfg: &MelConfig,
) -> Result<Vec<FeatureMatrix>> {
    use rayon::prelude::*;
    cfg.validate()?;
    let ex = Extractor::new(cfg);
    waves
        .par_iter()
        .map(|(id, w)| {
            if w.sample_rate_hz != cfg.sample_rate_hz {
                return Err(Error::invalid(format!(
                    "{id}: sample rate {} != {}",
                    w.sample_rate_hz, cfg.sample_rate_hz
                )));
            }
            Ok(FeatureMatrix::new(
                ex.run(&w.samples),
                cfg.hop_ms as f32,
                id,
            ))
        })
        .collect()
}
