use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with samples scaled to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl WaveBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::format("wav header", msg),
        hound::Error::Unsupported => Error::Unsupported {
            what: "wav encoding",
            detail: "format not understood".into(),
        },
        other => Error::format("wav file", other.to_string()),
    }
}

/// Reads a mono RIFF/WAVE file stored as PCM16 or IEEE float32.
///
/// PCM16 value `v` maps to `v / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported {
            what: "channel layout",
            detail: format!("{} channels (mono required)", spec.channels),
        });
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported {
                what: "wav encoding",
                detail: format!("{fmt:?} with {bits} bits per sample"),
            })
        }
    };
    WaveBuffer::new(samples, spec.sample_rate).map_err(|e| Error::format("wav data", e.to_string()))
}

/// Writes `wave` as mono PCM16. Samples are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, wave: &WaveBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &wave.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Writes `wave` as mono IEEE float32 (lossless).
pub fn write_wav_f32(path: impl AsRef<Path>, wave: &WaveBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &wave.samples {
        writer.write_sample(s).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_bytes(samples: &[i16], channels: u16) -> Vec<u8> {
        let data_len = (samples.len() * 2) as u32;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_len).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&(16000u32 * 2 * channels as u32).to_le_bytes());
        b.extend_from_slice(&(2 * channels).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&data_len.to_le_bytes());
        for s in samples {
            b.extend_from_slice(&s.to_le_bytes());
        }
        b
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        std::fs::write(&p, pcm16_bytes(&[0, 16384, -32768], 1)).unwrap();
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate_hz, 16000);
    }

    #[test]
    fn empty_data_chunk_is_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.wav");
        std::fs::write(&p, pcm16_bytes(&[], 1)).unwrap();
        let w = read_wav(&p).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn stereo_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        std::fs::write(&p, pcm16_bytes(&[1, 2, 3, 4], 2)).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn garbage_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFX....WAVEjunkjunkjunk").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let w = WaveBuffer::new(vec![0.1, -0.7, 0.333], 16000).unwrap();
        write_wav_f32(&p, &w).unwrap();
        assert_eq!(read_wav(&p).unwrap(), w);
    }
}
