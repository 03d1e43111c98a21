use crate::corpus::WaveBuffer;
use crate::error::{Error, Result};

pub const F0_MIN_HZ: f64 = 60.0;
pub const F0_MAX_HZ: f64 = 400.0;
pub const VOICING_THRESHOLD: f64 = 0.5;
const WIN_MS: f64 = 40.0;
const HOP_MS: f64 = 10.0;
/// Frames are centered where the 25 ms log-Mel frames are centered.
const CENTER_OFFSET_MS: f64 = 12.5;

/// Per-frame pitch on the 10 ms log-Mel frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    /// Natural log of F0 in Hz; 0 where unvoiced.
    pub log_f0: Vec<f32>,
    pub voiced: Vec<bool>,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.voiced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voiced.is_empty()
    }

    pub fn f0_hz(&self) -> Vec<Option<f64>> {
        self.log_f0
            .iter()
            .zip(&self.voiced)
            .map(|(l, &v)| v.then(|| (*l as f64).exp()))
            .collect()
    }
}

/// Normalized-autocorrelation pitch tracker.
///
/// Each 40 ms window is scored at every lag in the F0 search range; the
/// shortest lag whose correlation is within 5% of the best peak wins (this
/// avoids octave-down errors), refined by parabolic interpolation. Frames
/// whose peak correlation is below [`VOICING_THRESHOLD`] are unvoiced.
/// `num_frames` fixes the track length (normally the log-Mel frame count).
pub fn estimate_f0(wave: &WaveBuffer, num_frames: usize) -> Result<F0Track> {
    let sr = wave.sample_rate_hz as f64;
    if wave.sample_rate_hz == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let win = (WIN_MS * sr / 1000.0).round() as usize;
    let hop = HOP_MS * sr / 1000.0;
    let min_lag = (sr / F0_MAX_HZ).floor() as usize;
    let max_lag = (sr / F0_MIN_HZ).ceil() as usize;
    let x = &wave.samples;
    let mut log_f0 = vec![0.0f32; num_frames];
    let mut voiced = vec![false; num_frames];
    let mut buf = vec![0.0f64; win];
    for t in 0..num_frames {
        let center = (t as f64 * hop + CENTER_OFFSET_MS * sr / 1000.0).round() as i64;
        let start = center - win as i64 / 2;
        for (i, b) in buf.iter_mut().enumerate() {
            let j = start + i as i64;
            *b = if j >= 0 && (j as usize) < x.len() {
                x[j as usize] as f64
            } else {
                0.0
            };
        }
        let mean = buf.iter().sum::<f64>() / win as f64;
        buf.iter_mut().for_each(|b| *b -= mean);
        if buf.iter().map(|b| b * b).sum::<f64>() < 1e-10 {
            continue;
        }
        let r: Vec<f64> = (0..=max_lag.min(win - 1))
            .map(|lag| {
                if lag < min_lag.saturating_sub(1) {
                    return 0.0;
                }
                let (a, b) = (&buf[..win - lag], &buf[lag..]);
                let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                let ea: f64 = a.iter().map(|p| p * p).sum();
                let eb: f64 = b.iter().map(|q| q * q).sum();
                if ea <= 0.0 || eb <= 0.0 {
                    0.0
                } else {
                    num / (ea * eb).sqrt()
                }
            })
            .collect();
        let hi = r.len() - 1;
        let peaks: Vec<usize> = (min_lag.max(1)..hi)
            .filter(|&l| r[l] >= r[l - 1] && r[l] >= r[l + 1])
            .collect();
        let Some(best) = peaks.iter().map(|&l| r[l]).reduce(f64::max) else {
            continue;
        };
        if best < VOICING_THRESHOLD {
            continue;
        }
        let lag = *peaks
            .iter()
            .find(|&&l| r[l] >= 0.95 * best)
            .expect("best is a peak");
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let f0 = sr / (lag as f64 + shift);
        if !(F0_MIN_HZ..=F0_MAX_HZ).contains(&f0) {
            continue;
        }
        log_f0[t] = f0.ln() as f32;
        voiced[t] = true;
    }
    Ok(F0Track { log_f0, voiced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::sawtooth;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn sawtooth_pitch() {
        for f in [100.0, 220.0, 310.0] {
            let w = sawtooth(f, 1.0, 16000);
            let tr = estimate_f0(&w, 98).unwrap();
            let hz: Vec<f64> = tr.f0_hz().into_iter().flatten().collect();
            assert!(hz.len() > 90, "{f}: {} voiced", hz.len());
            assert!((median(hz) - f).abs() < 3.0);
        }
    }

    #[test]
    fn noise_and_silence_are_unvoiced() {
        let mut r = rng::stream(5, "noise", &[]);
        let noise: Vec<f32> = (0..16000)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut r);
                0.1 * v as f32
            })
            .collect();
        let tr = estimate_f0(&WaveBuffer::new(noise, 16000).unwrap(), 98).unwrap();
        let unvoiced = tr.voiced.iter().filter(|v| !**v).count();
        assert!(unvoiced as f64 >= 0.9 * 98.0, "{unvoiced}");
        let tr = estimate_f0(&WaveBuffer::new(vec![0.0; 16000], 16000).unwrap(), 98).unwrap();
        assert!(tr.voiced.iter().all(|v| !v));
    }
}
