//! Mel-spectrogram masked-prediction speech pre-training.
//!
//! The crate covers the whole desk-scale pipeline: waveform corpora and
//! synthetic data ([`corpus`]), log-Mel features ([`mel`]), k-means
//! pseudo-labels ([`quantizer`]), a small reverse-mode autodiff engine
//! ([`diff`]), the Transformer encoder with its two loss heads ([`model`]),
//! two-stage pre-training ([`trainer`]), CCA and MACs analysis
//! ([`analysis`]) and frozen-upstream probes ([`probes`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod corpus;
pub mod diff;
pub mod error;
pub mod mel;
pub mod model;
pub mod probes;
pub mod quantizer;
pub mod rng;
pub mod trainer;

pub use corpus::{Alignment, AlignmentFile, Manifest, ManifestEntry, Segment, WaveBuffer};
pub use error::{Error, Result};
pub use mel::{FeatureMatrix, MelConfig, NormStats};
pub use model::LossKind;
pub use model::{EncoderConfig, EncoderOutput, MaskPolicy};
pub use quantizer::{Codebook, CodebookSource, LabelSeq, PurityReport};
pub use trainer::{Checkpoint, FrameVariant, StagePlan, TrainConfig};
