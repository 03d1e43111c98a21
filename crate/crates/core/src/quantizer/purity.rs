use ndarray::Array2;

use super::LabelSeq;
use crate::corpus::AlignmentFile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PurityReport {
    /// Fraction of frames whose cluster's majority phone matches.
    pub phone_purity: f64,
    /// Fraction of frames whose phone's majority cluster matches.
    pub cluster_purity: f64,
    /// Cluster × phone frame counts.
    pub joint_counts: Array2<u64>,
}

impl PurityReport {
    pub fn from_counts(joint_counts: Array2<u64>) -> Result<Self> {
        let n: u64 = joint_counts.iter().sum();
        if n == 0 {
            return Err(Error::invalid("purity needs at least one labelled frame"));
        }
        let by_cluster: u64 = joint_counts
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().max().unwrap_or(0))
            .sum();
        let by_phone: u64 = joint_counts
            .columns()
            .into_iter()
            .map(|c| c.iter().copied().max().unwrap_or(0))
            .sum();
        Ok(Self {
            phone_purity: by_cluster as f64 / n as f64,
            cluster_purity: by_phone as f64 / n as f64,
            joint_counts,
        })
    }

    pub fn total_frames(&self) -> u64 {
        self.joint_counts.iter().sum()
    }
}

/// Phone and cluster purity of frame labels against phone alignments.
///
/// Only frames covered by an alignment segment count; utterances without an
/// alignment are skipped.
pub fn purity(labels: &[LabelSeq], phones: &AlignmentFile) -> Result<PurityReport> {
    let mut k = 0usize;
    for seq in labels {
        if (seq.frame_period_ms as f64 - phones.frame_period_ms).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "{}: labels at {} ms but alignments at {} ms",
                seq.utt_id, seq.frame_period_ms, phones.frame_period_ms
            )));
        }
        if let Some(m) = seq.max_label() {
            k = k.max(m as usize + 1);
        }
    }
    let p = phones.num_phones();
    let mut counts = Array2::<u64>::zeros((k.max(1), p.max(1)));
    for seq in labels {
        let Some(align) = phones.get(&seq.utt_id) else {
            continue;
        };
        for (l, ph) in seq.labels.iter().zip(align.frame_labels(seq.len())) {
            if let Some(ph) = ph {
                counts[[*l as usize, ph as usize]] += 1;
            }
        }
    }
    PurityReport::from_counts(counts)
        .map_err(|_| Error::invalid("no labelled frames overlap the alignments"))
}
