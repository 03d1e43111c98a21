//! Frozen-upstream probes: a learned softmax-weighted sum over layers feeding
//! a linear head for frame phone classification, speaker identification or
//! log-F0 regression.

mod f0;
mod probe;
mod weights;

pub use f0::{estimate_f0, F0Track, F0_MAX_HZ, F0_MIN_HZ, VOICING_THRESHOLD};
pub use probe::{
    features_as_upstream, probe_checkpoint, probe_train, split_utterances, upstream_layers,
    ProbeConfig, ProbeInput, ProbeLabels, ProbeResult, ProbeTask,
};
pub use weights::{weighted_sum, LayerWeights};
