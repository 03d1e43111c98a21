use melhubert::diff::grad_check;
use melhubert::model::{EncoderConfig, HeadConfig, LossKind, Model};
use melhubert::rng;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        input_dim: 6,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        dropout: 0.0,
        max_positions: 16,
    }
}

fn gaussian(r: &mut rng::StreamRng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(r))
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for (loss, dual) in [
        (LossKind::Ce, false),
        (LossKind::Ce, true),
        (LossKind::Cosine, false),
        (LossKind::Cosine, true),
    ] {
        let head = HeadConfig {
            loss,
            num_classes: 5,
            dual,
            proj_dim: 4,
            tau: 0.5,
            ..HeadConfig::default()
        };
        let model = Model::init(small_encoder(), head, 3).unwrap().cast::<f64>();
        let mut r = rng::stream(1, "grad-model", &[]);
        let input = gaussian(&mut r, (7, 6));
        let masked = vec![1usize, 2, 5];
        let labels: Vec<Vec<u32>> = (0..model.head.num_heads())
            .map(|h| (0..7).map(|t| ((t * 3 + h) % 5) as u32).collect())
            .collect();
        let params: Vec<Array2<f64>> = (0..model.params.len())
            .map(|i| model.params.tensor(i).clone())
            .collect();
        let report = grad_check(
            |tape, vars| {
                let mut drop_rng = rng::stream(0, "unused", &[]);
                let hidden = model
                    .forward_on(tape, vars, &input, &masked, false, &mut drop_rng)
                    .unwrap();
                let refs: Vec<&[u32]> = labels.iter().map(|l| l.as_slice()).collect();
                model
                    .loss_on(tape, vars, *hidden.last().unwrap(), &masked, &refs)
                    .unwrap()
                    .0
            },
            &params,
            1e-5,
            400,
            9,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "{loss:?} dual={dual}: {} {:?}",
            report.max_rel_error,
            report.worst
        );
    }
}
