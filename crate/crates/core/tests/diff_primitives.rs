//! Finite-difference checks for every tape primitive, plus forward sanity
//! checks against direct formulas.

use melhubert::diff::{grad_check, Tape, Var};
use melhubert::model::{loss_ce, loss_cosine};
use melhubert::rng::{self, StreamRng};
use ndarray::{array, Array2};
use rand_distr::{Distribution, StandardNormal};

const TOL: f64 = 1e-4;

fn gaussian(r: &mut StreamRng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(r))
}

/// Reduces `y` to a scalar through a fixed random weighting, so every output
/// coordinate contributes a distinct amount.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let mut r = rng::stream(seed, "projection", &[]);
    let w = gaussian(&mut r, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w);
    tape.sum(p)
}

fn check(name: &str, inputs: &[Array2<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let report = grad_check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = f(t, v);
            project(t, y, 77)
        },
        inputs,
        1e-6,
        300,
        1,
    )
    .unwrap();
    assert!(
        report.max_rel_error < TOL,
        "{name}: {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

fn inputs(shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
    let mut r = rng::stream(3, "inputs", &[]);
    shapes.iter().map(|&s| gaussian(&mut r, s)).collect()
}

#[test]
fn linear_algebra_primitives() {
    check("matmul", &inputs(&[(4, 3), (3, 5)]), |t, v| {
        t.matmul(v[0], v[1])
    });
    check("matmul_nt", &inputs(&[(4, 3), (6, 3)]), |t, v| {
        t.matmul_nt(v[0], v[1])
    });
    check("add", &inputs(&[(4, 3), (4, 3)]), |t, v| t.add(v[0], v[1]));
    check("sub", &inputs(&[(4, 3), (4, 3)]), |t, v| t.sub(v[0], v[1]));
    check("mul", &inputs(&[(4, 3), (4, 3)]), |t, v| t.mul(v[0], v[1]));
    check("add_row", &inputs(&[(4, 3), (1, 3)]), |t, v| {
        t.add_row(v[0], v[1])
    });
    check("scale", &inputs(&[(4, 3)]), |t, v| t.scale(v[0], -1.7));
    check("sum", &inputs(&[(4, 3)]), |t, v| t.sum(v[0]));
    check("mean_rows", &inputs(&[(5, 3)]), |t, v| t.mean_rows(v[0]));
}

#[test]
fn indexing_primitives() {
    check("concat_cols", &inputs(&[(4, 3), (4, 2)]), |t, v| {
        t.concat_cols(&[v[0], v[1], v[0]])
    });
    check("slice_cols", &inputs(&[(4, 6)]), |t, v| {
        t.slice_cols(v[0], 2, 3)
    });
    check("gather_rows", &inputs(&[(5, 3)]), |t, v| {
        t.gather_rows(v[0], &[4, 0, 4, 2])
    });
    check("replace_rows", &inputs(&[(5, 3), (1, 3)]), |t, v| {
        t.replace_rows(v[0], &[1, 3], v[1])
    });
}

#[test]
fn nonlinear_primitives() {
    check("softmax", &inputs(&[(4, 5)]), |t, v| t.softmax(v[0]));
    check("log_softmax", &inputs(&[(4, 5)]), |t, v| {
        t.log_softmax(v[0])
    });
    check("layer_norm", &inputs(&[(4, 6), (1, 6), (1, 6)]), |t, v| {
        t.layer_norm(v[0], v[1], v[2])
    });
    check("gelu", &inputs(&[(4, 5)]), |t, v| t.gelu(v[0]));
    check("cosine_sim", &inputs(&[(4, 3), (5, 3)]), |t, v| {
        t.cosine_sim(v[0], v[1])
    });
    check("cross_entropy", &inputs(&[(4, 5)]), |t, v| {
        t.cross_entropy(v[0], &[0, 4, 2, 2])
    });
    check(
        "weighted_sum",
        &inputs(&[(1, 3), (4, 2), (4, 2), (4, 2)]),
        |t, v| t.weighted_sum(v[0], &v[1..]),
    );
    // Training-mode dropout with the same mask on every evaluation.
    check("dropout", &inputs(&[(6, 5)]), |t, v| {
        let mut r = rng::stream(9, "dropout", &[]);
        t.dropout(v[0], 0.3, true, &mut r)
    });
}

#[test]
fn layer_weights_through_softmax_logits() {
    check(
        "softmax weighted sum",
        &inputs(&[(1, 4), (3, 2), (3, 2), (3, 2), (3, 2)]),
        |t, v| {
            let w = t.softmax(v[0]);
            t.weighted_sum(w, &v[1..])
        },
    );
}

#[test]
fn both_losses_and_dual_targets() {
    let masked = [0usize, 2, 3];
    let a: &[u32] = &[1, 0, 6, 3, 2];
    let b: &[u32] = &[4, 4, 0, 5, 1];
    let ins = inputs(&[(5, 4), (7, 4), (7, 4)]);
    check("ce", &ins, |t, v| {
        loss_ce(t, v[0], &[v[1]], &masked, &[a]).unwrap()
    });
    check("ce dual", &ins, |t, v| {
        loss_ce(t, v[0], &[v[1], v[2]], &masked, &[a, b]).unwrap()
    });
    // Cosine head: output, projection W and code table m, tau = 0.1.
    check("cosine", &inputs(&[(5, 4), (4, 3), (7, 3)]), |t, v| {
        loss_cosine(t, v[0], v[1], v[2], 0.1, &masked, a).unwrap()
    });
}

#[test]
fn softmax_and_log_softmax_forward() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]]);
    let s = t.softmax(x);
    let ls = t.log_softmax(x);
    let s = t.value(s).clone();
    let ls = t.value(ls).clone();
    let e = [1f64.exp(), 2f64.exp(), 3f64.exp()];
    let z: f64 = e.iter().sum();
    for j in 0..3 {
        assert!((s[[0, j]] - e[j] / z).abs() < 1e-12);
        assert!((ls[[0, j]] - (e[j] / z).ln()).abs() < 1e-12);
    }
    // Large logits stay finite.
    assert!((s[[1, 0]] - 0.5).abs() < 1e-12 && s[[1, 2]] == 0.0);
    assert!((ls[[1, 0]] + 2f64.ln()).abs() < 1e-12);
    assert!(ls[[1, 2]].is_finite());
}

#[test]
fn layer_norm_forward() {
    let mut r = rng::stream(4, "ln", &[]);
    let x = gaussian(&mut r, (3, 8)) * 5.0 + 2.0;
    let mut t = Tape::<f64>::new();
    let xv = t.constant(x);
    let g = t.constant(Array2::ones((1, 8)));
    let b = t.constant(Array2::zeros((1, 8)));
    let y = t.layer_norm(xv, g, b);
    for row in t.value(y).rows() {
        let mean = row.sum() / 8.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3, "{var}");
    }
}

#[test]
fn dropout_keeps_expected_fraction_and_mean() {
    let n = 100_000;
    let p = 0.1;
    let mut t = Tape::<f64>::new();
    let x = t.constant(Array2::ones((1, n)));
    let mut r = rng::stream(2, "dropout", &[]);
    let y = t.dropout(x, p, true, &mut r);
    let y = t.value(y);
    let dropped = y.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    assert!((dropped - p).abs() < 0.01, "{dropped}");
    let mean = y.sum() / n as f64;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
    // Eval mode is the identity.
    let z = t.dropout(x, p, false, &mut r);
    assert!(t.value(z).iter().all(|&v| v == 1.0));
}
