//! Synthetic "phone" corpus used in place of a real speech corpus.
//!
//! Each utterance is a chain of 100–400 ms segments. A segment is a harmonic
//! source shaped by the formant template of its phone class; speakers differ
//! in pitch and in a mild vocal-tract scale factor applied to every formant.
//! White noise is added on top.
//! Phone order follows a simple grammar: consecutive segments never repeat a
//! phone, and each phone is usually followed by its successor `c + 1`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{write_wav, Alignment, AlignmentFile, Manifest, ManifestEntry, Segment, WaveBuffer};
use crate::error::{Error, Result};
use crate::rng;

/// Samples per alignment frame (10 ms at 16 kHz).
pub const SAMPLES_PER_FRAME: usize = 160;
pub const MIN_SEGMENT_FRAMES: usize = 10;
pub const MAX_SEGMENT_FRAMES: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_utts: usize,
    pub classes: usize,
    pub seed: u64,
    pub speakers: usize,
    /// Noise standard deviation relative to the harmonic signal RMS.
    pub noise_rel: f64,
    pub sample_rate_hz: u32,
}

impl SynthConfig {
    pub fn new(num_utts: usize, classes: usize, seed: u64) -> Self {
        Self {
            num_utts,
            classes,
            seed,
            speakers: 4,
            noise_rel: 0.35,
            sample_rate_hz: 16_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_utts == 0 {
            return Err(Error::invalid("num_utts must be > 0"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("classes must be >= 2"));
        }
        if self.speakers == 0 {
            return Err(Error::invalid("speakers must be > 0"));
        }
        if self.sample_rate_hz != 16_000 {
            return Err(Error::invalid(
                "synthetic corpus is generated at 16 kHz only",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub speaker: usize,
    pub wave: WaveBuffer,
    pub alignment: Alignment,
}

/// Speaker index encoded in a synthetic utterance id (`spk<s>_u<i>`).
pub fn speaker_of(utt_id: &str) -> Option<usize> {
    utt_id.strip_prefix("spk")?.split('_').next()?.parse().ok()
}

const VOWELS: [[f64; 3]; 8] = [
    [500.0, 1500.0, 2500.0],
    [730.0, 1090.0, 2440.0],
    [280.0, 2250.0, 2890.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
];

/// Formant frequencies (Hz) of phone class `c` for a reference speaker.
pub fn phone_formants(c: usize) -> [f64; 3] {
    if c < VOWELS.len() {
        return VOWELS[c];
    }
    // Golden-ratio walk over the F1/F2 plane once the table runs out.
    let g = 0.618_033_988_749_895_f64;
    let a = (c as f64 * g).fract();
    let b = (c as f64 * g * g).fract();
    [300.0 + 300.0 * a, 900.0 + 900.0 * b, 2000.0 + 300.0 * a * b]
}

/// Speaker `s` of `speakers`: (mean F0 in Hz, vocal-tract scale). Pitch and
/// scale follow different orderings so neither predicts the other.
fn speaker_params(s: usize, speakers: usize) -> (f64, f64) {
    let pos = |i: usize| {
        if speakers > 1 {
            i as f64 / (speakers - 1) as f64
        } else {
            0.5
        }
    };
    let pitch_rank = (s * 3 + 1) % speakers.max(1);
    let f0 = 100.0 * 2.2f64.powf(pos(pitch_rank));
    let vtl_scale = 0.9 * (1.1f64 / 0.9).powf(pos(s));
    (f0, vtl_scale)
}

fn envelope(freq: f64, formants: &[f64; 3]) -> f64 {
    const GAINS: [f64; 3] = [1.0, 0.6, 0.3];
    const BANDWIDTHS: [f64; 3] = [90.0, 120.0, 160.0];
    let mut a = 0.02;
    for i in 0..3 {
        let x = (freq - formants[i]) / BANDWIDTHS[i];
        a += GAINS[i] / (1.0 + x * x);
    }
    a
}

/// Sums harmonics `1..` of the running phase with per-harmonic amplitudes.
fn harmonic_sample(phase: f64, amps: &[f64]) -> f64 {
    // sin(h*phase) via the Chebyshev recurrence.
    let c2 = 2.0 * phase.cos();
    let (mut s_prev, mut s_cur) = (0.0, phase.sin());
    let mut acc = 0.0;
    for &a in amps {
        acc += a * s_cur;
        let next = c2 * s_cur - s_prev;
        s_prev = s_cur;
        s_cur = next;
    }
    acc
}

/// Probability that a phone is followed by its successor.
pub const SUCCESSOR_PROB: f64 = 0.8;

fn next_phone(prev: Option<u32>, classes: usize, rng: &mut impl Rng) -> u32 {
    let classes = classes as u32;
    let Some(p) = prev else {
        return rng.random_range(0..classes);
    };
    let succ = (p + 1) % classes;
    if classes == 2 || rng.random::<f64>() < SUCCESSOR_PROB {
        return succ;
    }
    // Uniform over the phones that are neither `p` nor its successor.
    let r = rng.random_range(0..classes - 2);
    (succ + 1 + r) % classes
}

pub fn generate_utterance(cfg: &SynthConfig, index: usize) -> SynthUtterance {
    let mut rng = rng::stream(cfg.seed, "synth", &[index as u64]);
    let sr = cfg.sample_rate_hz as f64;
    let speaker = index % cfg.speakers;
    let (f0_base, vtl) = speaker_params(speaker, cfg.speakers);

    let target_frames = rng.random_range(100..=260usize);
    let mut segments = Vec::new();
    let mut frames = 0usize;
    let mut prev: Option<u32> = None;
    while frames < target_frames {
        let len = rng.random_range(MIN_SEGMENT_FRAMES..=MAX_SEGMENT_FRAMES);
        let phone = next_phone(prev, cfg.classes, &mut rng);
        prev = Some(phone);
        segments.push(Segment {
            start_frame: frames,
            end_frame: frames + len,
            phone_id: phone,
        });
        frames += len;
    }

    let n = frames * SAMPLES_PER_FRAME;
    let mut clean = vec![0.0f64; n];
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let vibrato_rate = rng.random_range(0.3..1.2);
    let vibrato_phase = rng.random_range(0.0..2.0 * PI);
    let mut phase = 0.0f64;
    for seg in &segments {
        let mut formants = phone_formants(seg.phone_id as usize);
        for f in formants.iter_mut() {
            *f *= vtl * (1.0 + 0.03 * std_normal.sample(&mut rng));
        }
        let gain = 10f64.powf(rng.random_range(-3.0..3.0) / 20.0);
        let seg_f0 = f0_base * (1.0 + 0.03 * std_normal.sample(&mut rng));
        let start = seg.start_frame * SAMPLES_PER_FRAME;
        let end = seg.end_frame * SAMPLES_PER_FRAME;
        let mut amps = Vec::new();
        let mut amp_f0 = f64::NAN;
        for (i, out) in clean[start..end].iter_mut().enumerate() {
            let t = (start + i) as f64 / sr;
            let f0 = seg_f0 * (1.0 + 0.08 * (2.0 * PI * vibrato_rate * t + vibrato_phase).sin());
            // Amplitudes only need refreshing when pitch drifts noticeably.
            if !((f0 - amp_f0).abs() < 0.5) {
                amp_f0 = f0;
                let nh = (7600.0 / f0).floor() as usize;
                amps.clear();
                amps.extend((1..=nh).map(|h| gain * envelope(h as f64 * f0, &formants)));
            }
            phase += 2.0 * PI * f0 / sr;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            *out = harmonic_sample(phase, &amps);
        }
    }

    let rms = (clean.iter().map(|x| x * x).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let scale = 0.1 / rms;
    let noise = Normal::new(0.0, cfg.noise_rel * 0.1).unwrap();
    let samples = clean
        .iter()
        .map(|&x| ((x * scale + noise.sample(&mut rng)).clamp(-1.0, 1.0)) as f32)
        .collect();

    SynthUtterance {
        utt_id: format!("spk{speaker}_u{index:05}"),
        speaker,
        wave: WaveBuffer {
            samples,
            sample_rate_hz: cfg.sample_rate_hz,
        },
        alignment: Alignment { segments },
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    use rayon::prelude::*;
    cfg.validate()?;
    Ok((0..cfg.num_utts)
        .into_par_iter()
        .map(|i| generate_utterance(cfg, i))
        .collect())
}

/// Generates the corpus into `dir`: `wav/<utt>.wav` (PCM16), `manifest.tsv`
/// and `alignments.txt` (10 ms frames).
pub fn synth_corpus(dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<(Manifest, AlignmentFile)> {
    let dir = dir.as_ref();
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let utts = generate(cfg)?;
    let mut entries = Vec::with_capacity(utts.len());
    let mut align = AlignmentFile::new(10.0);
    for u in utts {
        let rel = format!("wav/{}.wav", u.utt_id);
        write_wav(dir.join(&rel), &u.wave)?;
        entries.push(ManifestEntry {
            utt_id: u.utt_id.clone(),
            path: rel,
            num_samples: u.wave.len() as u64,
        });
        align.utterances.insert(u.utt_id, u.alignment);
    }
    let manifest = Manifest::new(entries, dir)?;
    manifest.save(dir.join("manifest.tsv"))?;
    align.save(dir.join("alignments.txt"))?;
    Ok((manifest, align))
}

/// Band-limited sawtooth at a constant fundamental.
pub fn sawtooth(f0_hz: f64, duration_s: f64, sample_rate_hz: u32) -> WaveBuffer {
    let sr = sample_rate_hz as f64;
    let n = (duration_s * sr).round() as usize;
    let nh = ((sr / 2.0 - 200.0) / f0_hz).floor().max(1.0) as usize;
    let amps: Vec<f64> = (1..=nh).map(|h| 0.3 / h as f64).collect();
    let samples = (0..n)
        .map(|i| {
            let phase = (2.0 * PI * f0_hz * i as f64 / sr) % (2.0 * PI);
            harmonic_sample(phase, &amps) as f32
        })
        .collect();
    WaveBuffer {
        samples,
        sample_rate_hz,
    }
}

/// One-second sawtooth utterances with log-uniform fundamentals in `[80, 320]` Hz.
pub fn sawtooth_corpus(num_utts: usize, seed: u64) -> Vec<(String, f64, WaveBuffer)> {
    let mut rng = rng::stream(seed, "sawtooth", &[]);
    (0..num_utts)
        .map(|i| {
            let f0 = 80.0 * 4f64.powf(rng.random::<f64>());
            (format!("saw_u{i:05}"), f0, sawtooth(f0, 1.0, 16_000))
        })
        .collect()
}
