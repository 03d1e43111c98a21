//! Waveform corpora: WAV I/O, manifests, phone alignments and the synthetic corpus.

mod alignment;
mod manifest;
pub mod synth;
mod wav;

pub use alignment::{Alignment, AlignmentFile, Segment};
pub use manifest::{Manifest, ManifestEntry};
pub use synth::{synth_corpus, SynthConfig, SynthUtterance};
pub use wav::{read_wav, write_wav, write_wav_f32, WaveBuffer, DEFAULT_SAMPLE_RATE};

use crate::error::Result;

/// Loads every utterance of `manifest` in manifest order.
pub fn load_waves(manifest: &Manifest) -> Result<Vec<(String, WaveBuffer)>> {
    use rayon::prelude::*;
    manifest
        .entries
        .par_iter()
        .map(|e| Ok((e.utt_id.clone(), read_wav(manifest.resolve(e))?)))
        .collect()
}
