//! Log-Mel front end: feature extraction, global normalization, and the
//! ×2 frame concatenation used by the 20 ms model variant.

mod features;
mod filterbank;
mod norm;

pub use features::{concat_frames, read_features, write_features, FeatureMatrix};
pub use filterbank::{
    compute_logmel, compute_logmel_batch, hz_to_mel, mel_to_hz, MelConfig, MelFilterbank,
};
pub use norm::{estimate_norm_stats, NormStats, STD_FLOOR};
