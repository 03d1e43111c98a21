use rand::seq::index::sample;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error across all checked coordinates.
    pub max_rel_error: f64,
    /// Worst relative error per input.
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Denominator floor for the relative error. Central differences carry a
/// rounding error near `1e-16 * |f| / eps`, which swamps gradients much
/// smaller than this; below it the check is effectively absolute (a mismatch
/// of `1e-10` at the 1e-4 tolerance).
pub const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of a scalar function against central finite
/// differences in 64-bit precision.
///
/// At least `min_coords` coordinates (or all of them, if fewer exist) are
/// drawn at random across the inputs. The relative error of each coordinate is
/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn grad_check<Func>(
    f: Func,
    inputs: &[Tensor<f64>],
    eps: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    Func: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone(), false)).collect();
        let out = f(&mut tape, &vars);
        if tape.shape(out) != (1, 1) {
            return Err(Error::shape("grad_check function must return a scalar"));
        }
        let y = tape.scalar(out);
        if !y.is_finite() {
            return Err(Error::Numerical(format!(
                "function value is not finite ({y})"
            )));
        }
        Ok(y)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars);
    let y = tape.scalar(out);
    if !y.is_finite() {
        return Err(Error::Numerical(format!(
            "function value is not finite ({y})"
        )));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.dim()))
        })
        .collect();

    let sizes: Vec<usize> = inputs.iter().map(|x| x.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng::stream(seed, "grad-check", &[]);
    let chosen: Vec<usize> = if total <= min_coords {
        (0..total).collect()
    } else {
        let mut v = sample(&mut r, total, min_coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut per_input = vec![0.0f64; inputs.len()];
    let mut worst: Option<(usize, usize, f64, f64)> = None;
    let mut worst_rel = -1.0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for flat in &chosen {
        let (mut which, mut off) = (0, *flat);
        while off >= sizes[which] {
            off -= sizes[which];
            which += 1;
        }
        let cols = inputs[which].ncols();
        let (i, j) = (off / cols, off % cols);
        let orig = work[which][[i, j]];
        work[which][[i, j]] = orig + eps;
        let plus = eval(&work)?;
        work[which][[i, j]] = orig - eps;
        let minus = eval(&work)?;
        work[which][[i, j]] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[which][[i, j]];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        per_input[which] = per_input[which].max(rel);
        if rel > worst_rel {
            worst_rel = rel;
            worst = Some((which, off, a, numeric));
        }
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        coords_checked: chosen.len(),
        worst,
    })
}
