use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};

/// A `T × D` frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f32>,
    pub frame_period_ms: f32,
    pub utt_id: String,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f32>, frame_period_ms: f32, utt_id: impl Into<String>) -> Self {
        Self {
            data,
            frame_period_ms,
            utt_id: utt_id.into(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Encodes in the `MHF1` layout: magic, u32 version (1), u32 T, u32 D,
    /// f32 frame period, then `T·D` row-major f32, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(20 + 4 * self.data.len());
        b.extend_from_slice(b"MHF1");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&(self.num_frames() as u32).to_le_bytes());
        b.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        b.extend_from_slice(&self.frame_period_ms.to_le_bytes());
        for v in self.data.iter() {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], utt_id: impl Into<String>) -> Result<Self> {
        let bad = |d: &str| Error::format("feature file", d.to_string());
        if bytes.len() < 20 || &bytes[..4] != b"MHF1" {
            return Err(bad("missing MHF1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != 1 {
            return Err(Error::Unsupported {
                what: "feature file version",
                detail: version.to_string(),
            });
        }
        let (t, d) = (u32_at(8) as usize, u32_at(12) as usize);
        let period = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let expected = 20 + 4 * t * d;
        if bytes.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let values: Vec<f32> = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = Array2::from_shape_vec((t, d), values).map_err(|e| bad(&e.to_string()))?;
        Ok(Self::new(data, period, utt_id))
    }
}

pub fn write_features(path: impl AsRef<Path>, f: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&f.to_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Reads an `MHF1` file; the utterance id is the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureMatrix::from_bytes(&bytes, id)
}

/// Stacks every `factor` consecutive frames into one row. Trailing frames that
/// do not fill a group are dropped.
pub fn concat_frames(f: &FeatureMatrix, factor: usize) -> Result<FeatureMatrix> {
    if factor == 0 {
        return Err(Error::invalid("concat factor must be >= 1"));
    }
    let (t, d) = (f.num_frames() / factor, f.dim());
    let kept = f.data.slice(s![..t * factor, ..]).to_owned();
    let data = kept
        .into_shape_with_order((t, d * factor))
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok(FeatureMatrix::new(
        data,
        f.frame_period_ms * factor as f32,
        f.utt_id.clone(),
    ))
}
