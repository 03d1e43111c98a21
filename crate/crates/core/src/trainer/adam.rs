use crate::diff::Tensor;
use crate::model::ParamSet;

/// Adam with bias correction and optional decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(
        params: &ParamSet<f32>,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    ) -> Self {
        let zeros = |_: usize| -> Vec<Tensor<f32>> {
            (0..params.len())
                .map(|i| Tensor::zeros(params.tensor(i).dim()))
                .collect()
        };
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros(0),
            v: zeros(1),
        }
    }

    /// Applies one update with learning rate `lr`. `grads[i]` is `None` for
    /// parameters that received no gradient.
    pub fn update(&mut self, params: &mut ParamSet<f32>, grads: &[Option<Tensor<f32>>], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.tensor_mut(i);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g as f64;
                    let mf = b1 * *m as f64 + (1.0 - b1) * g;
                    let vf = b2 * *v as f64 + (1.0 - b2) * g * g;
                    *m = mf as f32;
                    *v = vf as f32;
                    let update = lr
                        * ((mf / bc1) / ((vf / bc2).sqrt() + self.eps)
                            + self.weight_decay * *p as f64);
                    *p = (*p as f64 - update) as f32;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamSet::new();
        p.push("w", array![[1.0f32, -2.0]]);
        let mut adam = Adam::new(&p, 0.9, 0.98, 1e-8, 0.0);
        adam.update(&mut p, &[Some(array![[0.5f32, -3.0]])], 0.1);
        let w = p.get("w").unwrap();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = ParamSet::new();
        p.push("w", array![[0.123f32, 4.5e-3]]);
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.9, 0.98, 1e-8, 0.0);
        for _ in 0..5 {
            adam.update(&mut p, &[Some(array![[1.0f32, -7.0]])], 0.0);
        }
        assert_eq!(p, before);
    }
}
