mod common;

use std::collections::HashMap;

use melhubert::corpus::synth::sawtooth_corpus;
use melhubert::mel::{compute_logmel, estimate_norm_stats};
use melhubert::model::{EncoderConfig, HeadConfig};
use melhubert::probes::*;
use melhubert::trainer::{model_inputs, Checkpoint, FrameVariant, StagePlan, TrainConfig};
use melhubert::MelConfig;
use ndarray::Array2;

fn quick(task: ProbeTask) -> ProbeConfig {
    ProbeConfig {
        lr_grid: vec![1e-2, 1e-3],
        epochs: 100,
        ..ProbeConfig::new(task)
    }
}

fn small_checkpoint(norm: melhubert::NormStats) -> Checkpoint {
    let enc = EncoderConfig {
        d_model: 16,
        n_heads: 2,
        ffn_dim: 32,
        ..EncoderConfig::default()
    };
    Checkpoint::stage1_start(
        enc,
        HeadConfig::default(),
        MelConfig::default(),
        norm,
        vec![],
        TrainConfig::default(),
        StagePlan::default(),
    )
    .unwrap()
}

#[test]
fn single_speaker_probe_has_zero_error() {
    let c = common::corpus(10, 2, 1);
    let data = features_as_upstream(&c.feats);
    let spk: HashMap<String, usize> = c.feats.iter().map(|f| (f.utt_id.clone(), 0)).collect();
    let res = probe_train(
        &data,
        &ProbeLabels::Speakers(spk),
        &quick(ProbeTask::Speaker),
    )
    .unwrap();
    assert_eq!(res.test_metric, 0.0);
    assert_eq!(res.train_metric, 0.0);
}

#[test]
fn mel_features_predict_log_f0_of_sawtooths() {
    let mel = MelConfig::default();
    let waves = sawtooth_corpus(40, 3);
    let feats: Vec<_> = waves
        .iter()
        .map(|(id, _, w)| compute_logmel(w, &mel, id).unwrap())
        .collect();
    let norm = estimate_norm_stats(&feats).unwrap();
    let normed: Vec<_> = feats.iter().map(|f| norm.apply(f).unwrap()).collect();
    let tracks: HashMap<String, F0Track> = waves
        .iter()
        .zip(&normed)
        .map(|((id, f0, w), f)| {
            let tr = estimate_f0(w, f.num_frames()).unwrap();
            // The pitch tracker itself must agree with the known fundamental.
            let voiced: Vec<f64> = tr.f0_hz().into_iter().flatten().collect();
            assert!(
                voiced.len() * 10 >= tr.len() * 9,
                "{id}: {} of {} voiced",
                voiced.len(),
                tr.len()
            );
            let mut v = voiced.clone();
            v.sort_by(f64::total_cmp);
            assert!(
                (v[v.len() / 2] / f0 - 1.0).abs() < 0.02,
                "{id}: {} vs {f0}",
                v[v.len() / 2]
            );
            (id.clone(), tr)
        })
        .collect();
    let cfg = ProbeConfig {
        epochs: 300,
        ..ProbeConfig::new(ProbeTask::F0)
    };
    let res = probe_train(
        &features_as_upstream(&normed),
        &ProbeLabels::F0(tracks),
        &cfg,
    )
    .unwrap();
    assert!(res.test_metric < 0.05, "MSE {}", res.test_metric);
    assert!(res.test_items > 0);
}

#[test]
fn mel_phone_probe_beats_chance_by_far() {
    let c = common::corpus(40, 2, 2);
    let normed: Vec<_> = c.feats.iter().map(|f| c.norm.apply(f).unwrap()).collect();
    let res = probe_train(
        &features_as_upstream(&normed),
        &ProbeLabels::Phones(c.alignments.clone()),
        &quick(ProbeTask::PhoneFrame),
    )
    .unwrap();
    assert!(res.test_metric < 0.1, "FER {}", res.test_metric);
    // Same configuration, same result.
    let again = probe_train(
        &features_as_upstream(&normed),
        &ProbeLabels::Phones(c.alignments),
        &quick(ProbeTask::PhoneFrame),
    )
    .unwrap();
    assert_eq!(res.test_metric, again.test_metric);
    assert_eq!(res.weights, again.weights);
}

#[test]
fn probing_leaves_the_upstream_untouched() {
    let c = common::corpus(12, 2, 3);
    let ckpt = small_checkpoint(c.norm.clone());
    let before = ckpt.sha256();
    let inputs = model_inputs(&c.feats, &c.norm, FrameVariant::Ms20).unwrap();
    let hidden_before = upstream_layers(&ckpt.model, &inputs).unwrap();
    let res = probe_checkpoint(
        &ckpt,
        &inputs,
        &ProbeLabels::Phones(c.alignments.clone()),
        &quick(ProbeTask::PhoneFrame),
    )
    .unwrap();
    assert_eq!(ckpt.sha256(), before);
    assert_eq!(
        upstream_layers(&ckpt.model, &inputs).unwrap(),
        hidden_before
    );
    // One weight per hidden layer plus the feat layer, summing to one.
    assert_eq!(res.weights.len(), ckpt.model.encoder.n_layers + 1);
    assert!((res.weights.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((0.0..=1.0).contains(&res.test_metric));
}

#[test]
fn mismatched_labels_are_rejected() {
    let c = common::corpus(6, 2, 4);
    let data = features_as_upstream(&c.feats);
    let spk: HashMap<String, usize> = c.feats.iter().map(|f| (f.utt_id.clone(), 0)).collect();
    assert!(probe_train(
        &data,
        &ProbeLabels::Speakers(spk.clone()),
        &quick(ProbeTask::PhoneFrame)
    )
    .is_err());
    assert!(probe_train(
        &data,
        &ProbeLabels::Phones(c.alignments.clone()),
        &quick(ProbeTask::F0)
    )
    .is_err());
    let mut partial = spk;
    partial.remove(&c.feats[0].utt_id);
    assert!(probe_train(
        &data,
        &ProbeLabels::Speakers(partial),
        &quick(ProbeTask::Speaker)
    )
    .is_err());
    let bad = ProbeConfig {
        lr_grid: vec![],
        ..quick(ProbeTask::Speaker)
    };
    assert!(probe_train(&data, &ProbeLabels::Phones(c.alignments), &bad).is_err());
}

#[test]
fn weighted_sum_selects_and_averages() {
    let h: Vec<Array2<f32>> = (0..3)
        .map(|l| Array2::from_shape_fn((4, 2), |(t, j)| (l * 10 + t * 2 + j) as f32))
        .collect();
    let pick = LayerWeights {
        logits: vec![0.0, 0.0, 30.0],
    };
    let out = weighted_sum(&h, &pick).unwrap();
    assert!(out
        .iter()
        .zip(h[2].iter())
        .all(|(a, b)| (a - b).abs() < 1e-6));
    let mean = weighted_sum(&h, &LayerWeights::uniform(3)).unwrap();
    assert!(mean
        .iter()
        .zip(h[1].iter())
        .all(|(a, b)| (a - b).abs() < 1e-5));
    assert!(weighted_sum(&h[..2], &pick).is_err());
    let ragged = vec![h[0].clone(), Array2::zeros((3, 2)), h[2].clone()];
    assert!(weighted_sum(&ragged, &pick).is_err());
}

#[test]
fn utterance_split_is_a_seeded_partition() {
    let (tr, dev, te) = split_utterances(50, 0.1, 0.2, 9);
    assert_eq!((tr.len(), dev.len(), te.len()), (35, 5, 10));
    let mut all: Vec<usize> = tr.iter().chain(&dev).chain(&te).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
    assert_eq!(split_utterances(50, 0.1, 0.2, 9), (tr, dev, te.clone()));
    assert_ne!(split_utterances(50, 0.1, 0.2, 10).2, te);
}
