//! k-means pseudo-labels: codebook fitting, frame assignment and purity.

mod codebook;
mod kmeans;
mod labels;
mod purity;

pub use codebook::{assign, assign_all, Codebook, CodebookSource};
pub use kmeans::{kmeans_fit, KMeansConfig, KMeansFit};
pub use labels::{read_label_file, write_label_file, LabelSeq};
pub use purity::{purity, PurityReport};
