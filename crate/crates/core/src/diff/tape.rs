use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use super::{c, Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-6;
const NORM_EPS: f64 = 1e-12;

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast a `1 × m` row over every row of `x`.
    AddRow(Var, Var),
    Scale(Var, F),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ReplaceRows(Var, Vec<usize>, Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<F>,
        inv_std: Vec<F>,
    },
    Gelu(Var),
    Dropout(Var, Tensor<F>),
    CosineSim {
        a: Var,
        b: Var,
        a_hat: Tensor<F>,
        b_hat: Tensor<F>,
        a_norm: Vec<F>,
        b_norm: Vec<F>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<F>,
    },
    Sum(Var),
    MeanRows(Var),
    WeightedSum(Var, Vec<Var>),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorded computation graph for one forward pass.
pub struct Tape<F: Float> {
    nodes: Vec<Node<F>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every recorded value that needs one.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn acc<F: Float>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul inner dims {:?} x {:?}",
            va.dim(),
            vb.dim()
        );
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.ncols(),
            "matmul_nt dims {:?} x {:?}ᵀ",
            va.dim(),
            vb.dim()
        );
        let out = va.dot(&vb.t());
        self.push(out, Op::MatMulNT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (vx, vr) = (self.value(x), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row expects a 1 × m row");
        assert_eq!(vx.ncols(), vr.ncols(), "add_row widths");
        let out = vx + vr;
        self.push(out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, k: F) -> Var {
        let out = self.value(x) * k;
        self.push(out, Op::Scale(x, k), &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols rows must agree");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(x, start), &[x])
    }

    /// Row lookup; doubles as embedding lookup and frame selection.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let vx = self.value(x);
        let out = Array2::from_shape_fn((idx.len(), vx.ncols()), |(r, j)| vx[[idx[r], j]]);
        self.push(out, Op::GatherRows(x, idx.to_vec()), &[x])
    }

    /// Copies `x` and overwrites the rows in `idx` (distinct) with the `1 × m` row `v`.
    pub fn replace_rows(&mut self, x: Var, idx: &[usize], v: Var) -> Var {
        let mut out = self.value(x).clone();
        let row = self.value(v).row(0).to_owned();
        assert_eq!(row.len(), out.ncols(), "replace_rows width");
        for &i in idx {
            out.row_mut(i).assign(&row);
        }
        self.push(out, Op::ReplaceRows(x, idx.to_vec(), v), &[x, v])
    }

    /// Row-wise softmax with max shift.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = vx.clone();
        for mut row in out.rows_mut() {
            let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.fold(F::zero(), |a, &b| a + (b - m).exp()).ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    /// Row-wise layer normalization with learnable `1 × m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let (n, m) = vx.dim();
        let mut xhat = Array2::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        let mf: F = c(m as f64);
        for (i, row) in vx.rows().into_iter().enumerate() {
            let mean = row.sum() / mf;
            let var = row.fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / mf;
            let is = F::one() / (var + c(LN_EPS)).sqrt();
            inv_std.push(is);
            for j in 0..m {
                xhat[[i, j]] = (row[j] - mean) * is;
            }
        }
        let out = &(&xhat * self.value(gain)) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| {
            let u = gelu_inner(v);
            c::<F>(0.5) * v * (F::one() + u.tanh())
        });
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Inverted dropout. Identity when `!train` or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut impl Rng) -> Var {
        if !train || p <= 0.0 {
            return x;
        }
        let keep: F = c(1.0 / (1.0 - p));
        let (n, m) = self.shape(x);
        let mask = Array2::from_shape_fn((n, m), |_| {
            if rng.random::<f64>() < p {
                F::zero()
            } else {
                keep
            }
        });
        let out = self.value(x) * &mask;
        self.push(out, Op::Dropout(x, mask), &[x])
    }

    /// Cosine similarity between every row of `a` (`n × e`) and every row of
    /// `b` (`k × e`), giving `n × k`.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Var {
        let (a_hat, a_norm) = normalize_rows(self.value(a));
        let (b_hat, b_norm) = normalize_rows(self.value(b));
        let out = a_hat.dot(&b_hat.t());
        self.push(
            out,
            Op::CosineSim {
                a,
                b,
                a_hat,
                b_hat,
                a_norm,
                b_norm,
            },
            &[a, b],
        )
    }

    /// Summed cross-entropy of row-wise logits against integer targets (`1 × 1`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.nrows(), targets.len(), "one target per logit row");
        let probs = softmax_rows(vl);
        let mut loss = F::zero();
        for (row, &t) in vl.rows().into_iter().zip(targets) {
            assert!(
                t < row.len(),
                "target {t} out of range for {} classes",
                row.len()
            );
            let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.fold(F::zero(), |a, &b| a + (b - m).exp()).ln();
            loss += lse - row[t];
        }
        let out = Array2::from_elem((1, 1), loss);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let n = vx.nrows().max(1);
        let out = (vx.sum_axis(Axis(0)) / c::<F>(n as f64)).insert_axis(Axis(0));
        self.push(out, Op::MeanRows(x), &[x])
    }

    /// `Σ_l w[0, l] · xs[l]` for a `1 × L` weight row.
    pub fn weighted_sum(&mut self, w: Var, xs: &[Var]) -> Var {
        let vw = self.value(w);
        assert_eq!(vw.dim(), (1, xs.len()), "one weight per input");
        let shape = self.shape(xs[0]);
        let mut out = Array2::zeros(shape);
        for (l, x) in xs.iter().enumerate() {
            assert_eq!(self.shape(*x), shape, "weighted_sum shapes");
            out.scaled_add(vw[[0, l]], self.value(*x));
        }
        let mut inputs = vec![w];
        inputs.extend_from_slice(xs);
        self.push(out, Op::WeightedSum(w, xs.to_vec()), &inputs)
    }

    /// Reverse-mode sweep from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        self.backward_scaled(output, F::one())
    }

    /// Like [`Tape::backward`] but seeds the output gradient with `seed`.
    pub fn backward_scaled(&self, output: Var, seed: F) -> Result<Gradients<F>> {
        let shape = self.shape(output);
        if shape != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::from_elem((1, 1), seed));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], g.clone());
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], g.mapv(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(&mut grads[a.0], g * self.value(*b));
                }
                if self.wants(*b) {
                    acc(&mut grads[b.0], g * self.value(*a));
                }
            }
            Op::AddRow(x, row) => {
                if self.wants(*x) {
                    acc(&mut grads[x.0], g.clone());
                }
                if self.wants(*row) {
                    acc(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(x, k) => {
                if self.wants(*x) {
                    acc(&mut grads[x.0], g * *k);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if self.wants(*p) {
                        acc(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                if self.wants(*x) {
                    let mut gx = Array2::zeros(self.shape(*x));
                    let w = g.ncols();
                    gx.slice_mut(s![.., *start..*start + w]).assign(g);
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::GatherRows(x, idx) => {
                if self.wants(*x) {
                    let mut gx = Array2::zeros(self.shape(*x));
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = gx.row_mut(i);
                        dst += &g.row(r);
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::ReplaceRows(x, idx, v) => {
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for &i in idx {
                        gx.row_mut(i).fill(F::zero());
                    }
                    acc(&mut grads[x.0], gx);
                }
                if self.wants(*v) {
                    let mut gv = Array2::zeros((1, g.ncols()));
                    for &i in idx {
                        let mut dst = gv.row_mut(0);
                        dst += &g.row(i);
                    }
                    acc(&mut grads[v.0], gv);
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.dim());
                    Zip::from(gx.rows_mut())
                        .and(y.rows())
                        .and(g.rows())
                        .for_each(|mut gxr, yr, gr| {
                            let dot = yr
                                .iter()
                                .zip(gr.iter())
                                .fold(F::zero(), |a, (&y, &g)| a + y * g);
                            Zip::from(&mut gxr)
                                .and(&yr)
                                .and(&gr)
                                .for_each(|o, &y, &g| *o = y * (g - dot));
                        });
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::LogSoftmax(x) => {
                if self.wants(*x) {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.dim());
                    Zip::from(gx.rows_mut())
                        .and(y.rows())
                        .and(g.rows())
                        .for_each(|mut gxr, yr, gr| {
                            let total = gr.sum();
                            Zip::from(&mut gxr)
                                .and(&yr)
                                .and(&gr)
                                .for_each(|o, &y, &g| *o = g - y.exp() * total);
                        });
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                if self.wants(*gain) {
                    acc(
                        &mut grads[gain.0],
                        (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                }
                if self.wants(*bias) {
                    acc(&mut grads[bias.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*x) {
                    let dxhat = g * self.value(*gain);
                    let m: F = c(xhat.ncols() as f64);
                    let mut gx = Array2::zeros(xhat.dim());
                    for i in 0..xhat.nrows() {
                        let d = dxhat.row(i);
                        let xh = xhat.row(i);
                        let mean_d = d.sum() / m;
                        let mean_dx = d
                            .iter()
                            .zip(xh.iter())
                            .fold(F::zero(), |a, (&p, &q)| a + p * q)
                            / m;
                        for j in 0..xhat.ncols() {
                            gx[[i, j]] = inv_std[i] * (d[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::Gelu(x) => {
                if self.wants(*x) {
                    let k: F = c((2.0 / std::f64::consts::PI).sqrt());
                    let half: F = c(0.5);
                    let gx = Zip::from(self.value(*x)).and(g).map_collect(|&v, &gv| {
                        let t = gelu_inner(v).tanh();
                        let du = k * (F::one() + c::<F>(3.0 * 0.044715) * v * v);
                        gv * (half * (F::one() + t) + half * v * (F::one() - t * t) * du)
                    });
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::Dropout(x, mask) => {
                if self.wants(*x) {
                    acc(&mut grads[x.0], g * mask);
                }
            }
            Op::CosineSim {
                a,
                b,
                a_hat,
                b_hat,
                a_norm,
                b_norm,
            } => {
                if self.wants(*a) {
                    let d_hat = g.dot(b_hat);
                    acc(&mut grads[a.0], unnormalize_grad(a_hat, &d_hat, a_norm));
                }
                if self.wants(*b) {
                    let d_hat = g.t().dot(a_hat);
                    acc(&mut grads[b.0], unnormalize_grad(b_hat, &d_hat, b_norm));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.wants(*logits) {
                    let scale = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[[i, t]] -= F::one();
                    }
                    gl *= scale;
                    acc(&mut grads[logits.0], gl);
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    acc(
                        &mut grads[x.0],
                        Array2::from_elem(self.shape(*x), g[[0, 0]]),
                    );
                }
            }
            Op::MeanRows(x) => {
                if self.wants(*x) {
                    let (n, m) = self.shape(*x);
                    let inv: F = c(1.0 / n.max(1) as f64);
                    let row = g.row(0).mapv(|v| v * inv);
                    let gx = row.broadcast((n, m)).expect("broadcast").to_owned();
                    acc(&mut grads[x.0], gx);
                }
            }
            Op::WeightedSum(w, xs) => {
                let vw = self.value(*w);
                if self.wants(*w) {
                    let gw = Array2::from_shape_fn((1, xs.len()), |(_, l)| {
                        (g * self.value(xs[l])).sum()
                    });
                    acc(&mut grads[w.0], gw);
                }
                for (l, x) in xs.iter().enumerate() {
                    if self.wants(*x) {
                        acc(&mut grads[x.0], g * vw[[0, l]]);
                    }
                }
            }
        }
    }
}

fn gelu_inner<F: Float>(v: F) -> F {
    c::<F>((2.0 / std::f64::consts::PI).sqrt()) * (v + c::<F>(0.044715) * v * v * v)
}

pub(crate) fn softmax_rows<F: Float>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn normalize_rows<F: Float>(x: &Tensor<F>) -> (Tensor<F>, Vec<F>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let n = row
            .fold(F::zero(), |a, &v| a + v * v)
            .sqrt()
            .max(c(NORM_EPS));
        norms.push(n);
        row.mapv_inplace(|v| v / n);
    }
    (out, norms)
}

/// Gradient through `x ↦ x / |x|` given the normalized rows and their
/// upstream gradient.
fn unnormalize_grad<F: Float>(hat: &Tensor<F>, d_hat: &Tensor<F>, norms: &[F]) -> Tensor<F> {
    let mut out = d_hat.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let h = hat.row(i);
        let dot = h
            .iter()
            .zip(row.iter())
            .fold(F::zero(), |a, (&p, &q)| a + p * q);
        Zip::from(&mut row)
            .and(&h)
            .for_each(|o, &hv| *o = (*o - hv * dot) / norms[i]);
    }
    out
}
