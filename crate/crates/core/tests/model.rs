use melhubert::diff::Tape;
use melhubert::model::{loss_ce, loss_cosine, EncoderConfig, HeadConfig, LossKind, Model};
use melhubert::rng::{self, StreamRng};
use melhubert::FeatureMatrix;
use ndarray::{s, Array2};
use rand_distr::{Distribution, StandardNormal};

fn gaussian(r: &mut StreamRng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(r))
}

fn tiny() -> EncoderConfig {
    EncoderConfig {
        input_dim: 6,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 16,
        dropout: 0.1,
        max_positions: 32,
    }
}

fn cosine_head(k: usize) -> HeadConfig {
    HeadConfig {
        loss: LossKind::Cosine,
        num_classes: k,
        proj_dim: 5,
        tau: 0.1,
        ..HeadConfig::default()
    }
}

/// Mean loss of `model` on `input` with the given mask and label streams.
fn model_loss(
    model: &Model<f64>,
    input: &Array2<f64>,
    masked: &[usize],
    labels: &[Vec<u32>],
) -> f64 {
    let mut tape = Tape::new();
    let pv: Vec<_> = (0..model.params.len())
        .map(|i| tape.constant(model.params.tensor(i).clone()))
        .collect();
    let mut r = rng::stream(0, "unused", &[]);
    let hidden = model
        .forward_on(&mut tape, &pv, input, masked, false, &mut r)
        .unwrap();
    let refs: Vec<&[u32]> = labels.iter().map(|l| l.as_slice()).collect();
    let (sum, _) = model
        .loss_on(&mut tape, &pv, *hidden.last().unwrap(), masked, &refs)
        .unwrap();
    tape.scalar(sum) / masked.len() as f64
}

#[test]
fn uniform_logits_give_ln_k() {
    for k in [2usize, 100, 512] {
        let mut t = Tape::<f64>::new();
        let o = t.constant(Array2::from_elem((3, 4), 0.3));
        let w = t.param(Array2::zeros((k, 4)));
        let l = loss_ce(&mut t, o, &[w], &[0, 1, 2], &[&[0, (k - 1) as u32, 1]]).unwrap();
        assert!((t.scalar(l) - (k as f64).ln()).abs() < 1e-6, "k={k}");
    }
}

#[test]
fn cosine_loss_ignores_positive_rescaling() {
    let mut r = rng::stream(5, "rescale", &[]);
    let o = gaussian(&mut r, (6, 4));
    let w = gaussian(&mut r, (4, 3));
    let m = gaussian(&mut r, (9, 3));
    let labels = [0u32, 8, 3, 3, 1, 7];
    let loss = |w: &Array2<f64>, m: &Array2<f64>| {
        let mut t = Tape::new();
        let (ov, wv, mv) = (
            t.constant(o.clone()),
            t.constant(w.clone()),
            t.constant(m.clone()),
        );
        let l = loss_cosine(&mut t, ov, wv, mv, 0.1, &[0, 2, 3, 5], &labels).unwrap();
        t.scalar(l)
    };
    let base = loss(&w, &m);
    for (a, b) in [(3.7, 0.2), (1e-3, 50.0), (12.0, 12.0)] {
        let scaled = loss(&(&w * a), &(&m * b));
        assert!((scaled - base).abs() < 1e-5, "{a} {b}: {scaled} vs {base}");
    }
    // Whole-model version: scale the projection and code table in place.
    let model = Model::init(tiny(), cosine_head(9), 1)
        .unwrap()
        .cast::<f64>();
    let input = gaussian(&mut r, (10, 6));
    let masked = [1usize, 2, 7];
    let lab = vec![(0..10).map(|t| (t % 9) as u32).collect::<Vec<_>>()];
    let before = model_loss(&model, &input, &masked, &lab);
    let mut scaled = model.clone();
    for name in ["head.cosine.proj.0", "head.cosine.codebook"] {
        scaled
            .params
            .get_mut(name)
            .unwrap()
            .mapv_inplace(|v| v * 4.5);
    }
    assert!((model_loss(&scaled, &input, &masked, &lab) - before).abs() < 1e-5);
}

#[test]
fn huge_temperature_flattens_to_ln_k() {
    let mut r = rng::stream(6, "tau", &[]);
    let k = 17;
    let mut t = Tape::<f64>::new();
    let o = t.constant(gaussian(&mut r, (4, 5)));
    let w = t.constant(gaussian(&mut r, (5, 3)));
    let m = t.constant(gaussian(&mut r, (k, 3)));
    let l = loss_cosine(&mut t, o, w, m, 1e6, &[0, 1, 2, 3], &[0, 5, 16, 2]).unwrap();
    assert!((t.scalar(l) - (k as f64).ln()).abs() < 1e-5);
}

#[test]
fn loss_depends_only_on_masked_frames() {
    let mut r = rng::stream(7, "mutation", &[]);
    for (loss, dual) in [
        (LossKind::Ce, false),
        (LossKind::Ce, true),
        (LossKind::Cosine, false),
    ] {
        let head = HeadConfig {
            loss,
            dual,
            ..cosine_head(6)
        };
        let model = Model::init(tiny(), head, 2).unwrap().cast::<f64>();
        let input = gaussian(&mut r, (12, 6));
        let masked = [3usize, 4, 5, 9];
        let labels: Vec<Vec<u32>> = (0..model.head.num_heads())
            .map(|h| (0..12).map(|t| ((t + h) % 6) as u32).collect())
            .collect();
        let base = model_loss(&model, &input, &masked, &labels);

        // Labels of unmasked frames are never read.
        let mut other = labels.clone();
        for l in other.iter_mut() {
            for (t, v) in l.iter_mut().enumerate() {
                if !masked.contains(&t) {
                    *v = (*v + 1) % 6;
                }
            }
        }
        assert_eq!(model_loss(&model, &input, &masked, &other), base);

        // Inputs at masked positions are replaced by the mask embedding.
        let mut noisy = input.clone();
        for &t in &masked {
            noisy.row_mut(t).fill(123.0);
        }
        assert_eq!(model_loss(&model, &noisy, &masked, &labels), base);

        // Changing a masked label does change the loss.
        let mut flipped = labels.clone();
        flipped[0][masked[0]] = (flipped[0][masked[0]] + 1) % 6;
        assert_ne!(model_loss(&model, &input, &masked, &flipped), base);
    }
}

#[test]
fn parameter_counts() {
    // Desk encoder (80 → 64, 2 × [64, 4 heads, 256], 512 positions), counted
    // by hand: 5184 + 64 + 32768 + 2 · 49984 + 128.
    let desk = EncoderConfig::default();
    assert_eq!(desk.num_params(), 138_112);
    // A standard 768-wide Transformer block has 7,087,872 parameters.
    let base = EncoderConfig::base(80);
    let one = EncoderConfig {
        n_layers: 1,
        ..base.clone()
    };
    let zero = EncoderConfig {
        n_layers: 0,
        ..base.clone()
    };
    assert_eq!(one.num_params() - zero.num_params(), 7_087_872);

    for head in [HeadConfig::default(), cosine_head(100)] {
        let model = Model::init(desk.clone(), head.clone(), 0).unwrap();
        let head_params = match head.loss {
            LossKind::Ce => head.num_classes * desk.d_model,
            LossKind::Cosine => desk.d_model * head.proj_dim + head.num_classes * head.proj_dim,
        };
        assert_eq!(model.params.num_scalars(), desk.num_params() + head_params);
    }
}

#[test]
fn forward_shapes_and_empty_input() {
    let model = Model::init(tiny(), HeadConfig::default(), 0).unwrap();
    for t in [0usize, 1, 9] {
        let f = FeatureMatrix::new(Array2::from_elem((t, 6), 0.5), 20.0, "u");
        let out = model.forward(&f, None).unwrap();
        assert_eq!(out.hidden.len(), 3);
        for h in &out.hidden {
            assert_eq!(h.dim(), (t, 8));
            assert!(h.iter().all(|v| v.is_finite()));
        }
    }
    let bad = FeatureMatrix::new(Array2::zeros((3, 5)), 20.0, "u");
    assert!(model.forward(&bad, None).is_err());
    let long = FeatureMatrix::new(Array2::zeros((33, 6)), 20.0, "u");
    assert!(model.forward(&long, None).is_err());
    let f = FeatureMatrix::new(Array2::zeros((4, 6)), 20.0, "u");
    assert!(model.forward(&f, Some(&[4])).is_err());
}

#[test]
fn masked_rows_carry_the_mask_embedding() {
    let model = Model::init(tiny(), HeadConfig::default(), 4).unwrap();
    let mut r = rng::stream(1, "x", &[]);
    let f = FeatureMatrix::new(gaussian(&mut r, (6, 6)).mapv(|v| v as f32), 20.0, "u");
    let out = model.forward(&f, Some(&[1, 4])).unwrap();
    let emb = model.params.get("mask_emb").unwrap();
    for t in [1usize, 4] {
        assert_eq!(out.hidden[0].row(t), emb.row(0));
    }
    assert_ne!(out.hidden[0].row(0), emb.row(0));
}

#[test]
fn init_and_forward_are_deterministic() {
    let a = Model::init(tiny(), HeadConfig::default(), 11).unwrap();
    let b = Model::init(tiny(), HeadConfig::default(), 11).unwrap();
    let c = Model::init(tiny(), HeadConfig::default(), 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(
        a.params.get("blocks.0.q.weight"),
        c.params.get("blocks.0.q.weight")
    );
    let mut r = rng::stream(1, "x", &[]);
    let f = FeatureMatrix::new(gaussian(&mut r, (7, 6)).mapv(|v| v as f32), 20.0, "u");
    let h1 = a.forward(&f, Some(&[2])).unwrap().hidden;
    let h2 = a.forward(&f, Some(&[2])).unwrap().hidden;
    assert_eq!(h1, h2);
}

#[test]
fn code_table_can_start_from_centroids() {
    let mut model = Model::init(tiny(), cosine_head(4), 0).unwrap();
    let centroids = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f32);
    model.set_code_table(&centroids).unwrap();
    assert_eq!(
        model.params.get("head.cosine.codebook").unwrap(),
        &centroids
    );
    assert!(model
        .set_code_table(&centroids.slice(s![.., ..3]).to_owned())
        .is_err());
    let mut ce = Model::init(tiny(), HeadConfig::default(), 0).unwrap();
    assert!(ce.set_code_table(&centroids).is_err());
}
