mod common;

use melhubert::analysis::*;
use melhubert::model::{EncoderConfig, HeadConfig, Model};
use melhubert::rng::{self, StreamRng};
use melhubert::trainer::{model_inputs, FrameVariant};
use melhubert::FeatureMatrix;
use ndarray::{concatenate, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

fn gaussian(r: &mut StreamRng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(r))
}

#[test]
fn cca_self_similarity_and_symmetry() {
    let mut r = rng::stream(1, "cca", &[]);
    let x = gaussian(&mut r, (500, 6));
    let y = &x.slice(ndarray::s![.., ..3]).to_owned() + &(gaussian(&mut r, (500, 3)) * 0.5);
    let cfg = CcaConfig::default();
    assert!((cca_score(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-6);
    let (a, b) = (
        cca_score(&x, &y, &cfg).unwrap(),
        cca_score(&y, &x, &cfg).unwrap(),
    );
    assert!((a - b).abs() < 1e-9, "{a} {b}");
}

#[test]
fn cca_is_invariant_to_invertible_affine_maps() {
    let mut r = rng::stream(2, "affine", &[]);
    let x = gaussian(&mut r, (2000, 5));
    let y = x.dot(&gaussian(&mut r, (5, 4))) + gaussian(&mut r, (2000, 4)) * 2.0;
    let cfg = CcaConfig::default();
    let base = cca_score(&x, &y, &cfg).unwrap();
    // A well-conditioned random map plus an offset.
    let m = Array2::<f64>::eye(5) * 2.0 + gaussian(&mut r, (5, 5)) * 0.3;
    let shift = gaussian(&mut r, (1, 5)) * 10.0;
    let xt = x.dot(&m) + &shift;
    let yt = y.mapv(|v| -3.0 * v + 7.0);
    let moved = cca_score(&xt, &yt, &cfg).unwrap();
    assert!((moved - base).abs() < 1e-3, "{base} vs {moved}");
}

#[test]
fn cca_null_score_is_small() {
    let mut r = rng::stream(3, "null", &[]);
    let x = gaussian(&mut r, (10_000, 8));
    let y = gaussian(&mut r, (10_000, 8));
    let s = cca_score(&x, &y, &CcaConfig::default()).unwrap();
    assert!(s < 0.1, "{s}");
}

#[test]
fn cca_recovers_planted_correlations() {
    // x = [a, b], y = [a cos θ + n sin θ, c] with a, b, c, n independent:
    // canonical correlations are cos θ and 0, so the mean is cos θ / 2.
    let mut r = rng::stream(4, "planted", &[]);
    let n = 20_000;
    let theta = 0.6f64;
    let (a, b, c, e) = (
        gaussian(&mut r, (n, 1)),
        gaussian(&mut r, (n, 1)),
        gaussian(&mut r, (n, 1)),
        gaussian(&mut r, (n, 1)),
    );
    let x = concatenate(Axis(1), &[a.view(), b.view()]).unwrap();
    let y0 = &a * theta.cos() + &e * theta.sin();
    let y = concatenate(Axis(1), &[y0.view(), c.view()]).unwrap();
    let s = cca_score(&x, &y, &CcaConfig::default()).unwrap();
    assert!((s - theta.cos() / 2.0).abs() < 0.02, "{s}");
}

#[test]
fn phone_one_hots_score_one() {
    let c = common::corpus(20, 2, 1);
    let onehots: Vec<FeatureMatrix> = c
        .feats
        .iter()
        .map(|f| {
            let frames = c.alignments.utterances[&f.utt_id].frame_labels(f.num_frames());
            let data = Array2::from_shape_fn((f.num_frames(), 3), |(t, p)| {
                (frames[t] == Some(p as u32)) as u8 as f32
            });
            FeatureMatrix::new(data, 10.0, f.utt_id.clone())
        })
        .collect();
    let s = phone_cca(&[onehots], &c.alignments, &CcaConfig::default()).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-6, "{s:?}");
}

#[test]
fn input_layer_matches_mel_best_at_init() {
    let c = common::corpus(30, 2, 2);
    let inputs = model_inputs(&c.feats, &c.norm, FrameVariant::Ms20).unwrap();
    let model = Model::init(EncoderConfig::default(), HeadConfig::default(), 0).unwrap();
    let layers = layer_activations(&model, &inputs).unwrap();
    assert_eq!(layers.len(), 3);
    let s = mel_cca(
        &layers,
        &inputs,
        &CcaConfig::default(),
        MEL_CCA_MAX_FRAMES,
        0,
    )
    .unwrap();
    // The feat layer is an affine image of the input: CCA 1 over its rank.
    assert!((s[0] - 1.0).abs() < 1e-3, "{s:?}");
    assert!(s[1..].iter().all(|&v| v < s[0]), "{s:?}");
    let p = phone_cca(&layers, &c.alignments, &CcaConfig::default()).unwrap();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)), "{p:?}");
}

#[test]
fn layer_score_csv_round_trip_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let names = layer_names(2);
    assert_eq!(names, vec!["feat", "1", "2"]);
    let scores = vec![0.9, 0.5, 0.25];
    let p = dir.path().join("cca.csv");
    write_layer_scores(&p, "phone_cca", &names, &scores).unwrap();
    let back = read_layer_scores(&p).unwrap();
    assert_eq!(
        back,
        names
            .iter()
            .cloned()
            .zip(scores.iter().copied())
            .collect::<Vec<_>>()
    );
    let svg = dir.path().join("cca.svg");
    write_svg_chart(&svg, "phone CCA", &names, &[("trained", &scores)]).unwrap();
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn macs_presets_reproduce_the_compute_comparison() {
    let hubert = macs_count(&preset("hubert-base-macs").unwrap()).unwrap();
    let mel20 = macs_count(&preset("melhubert-20ms").unwrap()).unwrap();
    let mel10 = macs_count(&preset("melhubert-10ms").unwrap()).unwrap();
    let conv = hubert.share("conv frontend").unwrap();
    assert!((0.30..=0.36).contains(&conv), "{conv}");
    assert!(
        (mel20.total_giga() / 4.93 - 1.0).abs() <= 0.15,
        "{}",
        mel20.total_giga()
    );
    assert!(
        (hubert.total_giga() / 7.42 - 1.0).abs() <= 0.15,
        "{}",
        hubert.total_giga()
    );
    let saving = 1.0 - mel20.total as f64 / hubert.total as f64;
    assert!((saving - 0.335).abs() <= 0.03, "{saving}");
    // Halving the frame rate more than halves the compute (attention is quadratic).
    assert!(mel10.total > 2 * mel20.total);
    let best = macs_count(&preset("melhubert-20ms-best").unwrap()).unwrap();
    assert_eq!(best.group("transformer"), mel20.group("transformer"));
    assert!(preset("nope").is_err());
}

#[test]
fn macs_are_additive_over_splits() {
    for name in PRESETS {
        let spec = preset(name).unwrap();
        let full = macs_count(&spec).unwrap();
        for at in 0..=spec.groups.len() {
            let (a, b) = spec.split_at(at).unwrap();
            let (ma, mb) = (macs_count(&a).unwrap().total, macs_count(&b).unwrap().total);
            assert_eq!(ma + mb, full.total, "{name} split at {at}");
        }
        assert_eq!(full.groups.iter().map(|(_, m)| m).sum::<u64>(), full.total);
    }
}

#[test]
fn attention_and_ffn_hand_counts() {
    let spec = ArchSpec::from_toml(
        r#"
name = "tiny"
[input]
kind = "frames"
length = 10
dim = 8

[[groups]]
name = "block"
layers = [
  { kind = "attention", d_model = 8, heads = 2 },
  { kind = "ffn", d_model = 8, hidden = 32 },
]
"#,
    )
    .unwrap();
    let r = macs_count(&spec).unwrap();
    // Projections 4·T·d² = 2560, scores and weighted values 2·T²·d = 1600,
    // feed-forward 2·T·d·h = 5120.
    assert_eq!(r.total, 2560 + 1600 + 5120);
}
