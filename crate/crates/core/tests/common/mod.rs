#![allow(dead_code)]

use melhubert::corpus::synth::{generate, SynthConfig};
use melhubert::mel::{compute_logmel, estimate_norm_stats, MelConfig};
use melhubert::quantizer::{assign_all, kmeans_fit, KMeansConfig};
use melhubert::{AlignmentFile, FeatureMatrix, LabelSeq, NormStats};

pub struct Corpus {
    pub feats: Vec<FeatureMatrix>,
    pub norm: NormStats,
    pub labels: Vec<LabelSeq>,
    pub alignments: AlignmentFile,
    pub speakers: Vec<usize>,
}

/// Synthetic utterances with 10 ms log-Mel features and k-means labels.
pub fn corpus(num_utts: usize, k: usize, seed: u64) -> Corpus {
    let utts = generate(&SynthConfig::new(num_utts, 3, seed)).unwrap();
    let mel = MelConfig::default();
    let feats: Vec<_> = utts
        .iter()
        .map(|u| compute_logmel(&u.wave, &mel, &u.utt_id).unwrap())
        .collect();
    let norm = estimate_norm_stats(&feats).unwrap();
    let normed: Vec<_> = feats.iter().map(|f| norm.apply(f).unwrap()).collect();
    let fit = kmeans_fit(&normed, &KMeansConfig::new(k, seed)).unwrap();
    let labels = assign_all(&fit.codebook, &normed).unwrap();
    let mut alignments = AlignmentFile::new(10.0);
    for u in &utts {
        alignments
            .utterances
            .insert(u.utt_id.clone(), u.alignment.clone());
    }
    Corpus {
        feats,
        norm,
        labels,
        alignments,
        speakers: utts.iter().map(|u| u.speaker).collect(),
    }
}
