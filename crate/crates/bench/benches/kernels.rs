use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use melhubert::corpus::synth::{generate, SynthConfig};
use melhubert::mel::{compute_logmel, estimate_norm_stats};
use melhubert::model::{EncoderConfig, HeadConfig, Model};
use melhubert::quantizer::{assign, kmeans_fit, KMeansConfig};
use melhubert::trainer::{
    model_inputs, stage1_examples, FrameVariant, TrainConfig, TrainUtt, Trainer,
};
use melhubert::{Codebook, CodebookSource, FeatureMatrix, MelConfig};
use ndarray::Array2;

struct Fixture {
    feats: Vec<FeatureMatrix>,
    normed: Vec<FeatureMatrix>,
    data: Vec<TrainUtt>,
}

fn fixture() -> Fixture {
    let utts = generate(&SynthConfig::new(16, 3, 0)).unwrap();
    let mel = MelConfig::default();
    let feats: Vec<_> = utts
        .iter()
        .map(|u| compute_logmel(&u.wave, &mel, &u.utt_id).unwrap())
        .collect();
    let norm = estimate_norm_stats(&feats).unwrap();
    let normed: Vec<_> = feats.iter().map(|f| norm.apply(f).unwrap()).collect();
    let fit = kmeans_fit(&normed, &KMeansConfig::new(16, 0)).unwrap();
    let labels = melhubert::quantizer::assign_all(&fit.codebook, &normed).unwrap();
    let data = stage1_examples(&feats, &norm, &labels, FrameVariant::Ms20, false).unwrap();
    Fixture {
        feats,
        normed,
        data,
    }
}

fn desk_model() -> Model {
    let head = HeadConfig {
        num_classes: 16,
        ..HeadConfig::default()
    };
    Model::init(EncoderConfig::default(), head, 0).unwrap()
}

fn bench_frontend(c: &mut Criterion) {
    let utts = generate(&SynthConfig::new(1, 3, 1)).unwrap();
    let mel = MelConfig::default();
    c.bench_function("logmel/one utterance", |b| {
        b.iter(|| compute_logmel(&utts[0].wave, &mel, "u").unwrap())
    });
}

fn bench_quantizer(c: &mut Criterion) {
    let f = fixture();
    let centroids = Array2::from_shape_fn((100, 40), |(i, j)| {
        ((i * 7 + j * 3) % 11) as f32 / 5.0 - 1.0
    });
    let cb = Codebook::new(centroids, CodebookSource::LogMel).unwrap();
    c.bench_function("kmeans/assign k=100", |b| {
        b.iter(|| assign(&cb, &f.normed[0]).unwrap())
    });
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    g.bench_function("fit k=16", |b| {
        b.iter(|| kmeans_fit(&f.normed, &KMeansConfig::new(16, 0)).unwrap())
    });
    g.finish();
}

fn bench_model(c: &mut Criterion) {
    let f = fixture();
    let model = desk_model();
    let inputs = model_inputs(
        &f.feats[..1],
        &estimate_norm_stats(&f.feats).unwrap(),
        FrameVariant::Ms20,
    )
    .unwrap();
    c.bench_function("encoder/forward", |b| {
        b.iter(|| model.forward(&inputs[0], None).unwrap())
    });

    let cfg = TrainConfig {
        lr: 1e-3,
        accum_steps: 1,
        ..TrainConfig::default()
    };
    let batch: Vec<(u64, &TrainUtt)> = f
        .data
        .iter()
        .take(8)
        .enumerate()
        .map(|(i, u)| (i as u64, u))
        .collect();
    let mut g = c.benchmark_group("trainer");
    g.sample_size(10);
    g.bench_function("step, 8 utterances", |b| {
        b.iter_batched(
            || Trainer::new(model.clone(), cfg.clone()).unwrap(),
            |mut tr| tr.step_on(&batch).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(frontend, bench_frontend);
criterion_group!(quantizer, bench_quantizer);
criterion_group!(model, bench_model);
criterion_main!(frontend, quantizer, model);
