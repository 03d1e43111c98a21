//! Layer-wise CCA similarity and multiply-accumulate accounting.

mod cca;
mod macs;
mod report;

pub use cca::{cca_score, layer_activations, mel_cca, phone_cca, CcaConfig, MEL_CCA_MAX_FRAMES};
pub use macs::{
    macs_count, preset, ArchSpec, InputKind, InputSpec, LayerGroup, LayerSpec, MacsReport, PRESETS,
};
pub use report::{layer_names, read_layer_scores, write_layer_scores, write_svg_chart};
