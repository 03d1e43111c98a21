use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::heads::{ce_logits, cosine_logits, masked_ce, HeadConfig, LossKind};
use super::{EncoderConfig, ParamSet};
use crate::diff::{c, Float, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mel::FeatureMatrix;
use crate::rng::{self, StreamRng};

const INPUT_W: usize = 0;
const INPUT_B: usize = 1;
const MASK_EMB: usize = 2;
const POS_EMB: usize = 3;
const BLOCK_BASE: usize = 4;
const PER_BLOCK: usize = 16;

const BLOCK_PARAMS: [&str; PER_BLOCK] = [
    "ln1.gain",
    "ln1.bias",
    "q.weight",
    "q.bias",
    "k.weight",
    "k.bias",
    "v.weight",
    "v.bias",
    "out.weight",
    "out.bias",
    "ln2.gain",
    "ln2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

/// Every layer's activations for one utterance. `hidden[0]` is the projected
/// input ("feat"); `hidden[l]` is the output of block `l`, with the final
/// layer norm applied to the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Vec<Array2<f32>>,
    pub masked_indices: Vec<usize>,
    pub frame_period_ms: f32,
}

/// Encoder plus prediction heads, with all parameters in one ordered set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Float = f32> {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub params: ParamSet<F>,
}

fn xavier(rng: &mut StreamRng, fan_in: usize, fan_out: usize) -> Tensor<f32> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    normal(rng, (fan_in, fan_out), std)
}

fn normal(rng: &mut StreamRng, shape: (usize, usize), std: f64) -> Tensor<f32> {
    let n = Normal::new(0.0, std).unwrap();
    Array2::from_shape_simple_fn(shape, || n.sample(rng) as f32)
}

/// Starting point for the learned position table: sin/cos pairs at
/// geometrically spaced wavelengths, so relative offsets are linearly
/// recoverable from the first step.
fn sinusoid_table(positions: usize, d: usize) -> Tensor<f32> {
    Array2::from_shape_fn((positions, d), |(t, j)| {
        let rate = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        let a = t as f64 * rate;
        (if j % 2 == 0 { a.sin() } else { a.cos() }) as f32
    })
}

impl Model<f32> {
    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn init(encoder: EncoderConfig, head: HeadConfig, seed: u64) -> Result<Self> {
        encoder.validate()?;
        head.validate()?;
        let mut r = rng::stream(seed, "init", &[]);
        let d = encoder.d_model;
        let f = encoder.ffn_dim;
        let mut p = ParamSet::new();
        p.push("input.weight", xavier(&mut r, encoder.input_dim, d));
        p.push("input.bias", Array2::zeros((1, d)));
        p.push("mask_emb", normal(&mut r, (1, d), 1.0));
        p.push("pos_emb", sinusoid_table(encoder.max_positions, d));
        for l in 0..encoder.n_layers {
            let name = |s: &str| format!("blocks.{l}.{s}");
            p.push(name("ln1.gain"), Array2::ones((1, d)));
            p.push(name("ln1.bias"), Array2::zeros((1, d)));
            for proj in ["q", "k", "v", "out"] {
                p.push(name(&format!("{proj}.weight")), xavier(&mut r, d, d));
                p.push(name(&format!("{proj}.bias")), Array2::zeros((1, d)));
            }
            p.push(name("ln2.gain"), Array2::ones((1, d)));
            p.push(name("ln2.bias"), Array2::zeros((1, d)));
            p.push(name("fc1.weight"), xavier(&mut r, d, f));
            p.push(name("fc1.bias"), Array2::zeros((1, f)));
            p.push(name("fc2.weight"), xavier(&mut r, f, d));
            p.push(name("fc2.bias"), Array2::zeros((1, d)));
        }
        p.push("final_ln.gain", Array2::ones((1, d)));
        p.push("final_ln.bias", Array2::zeros((1, d)));
        let k = head.num_classes;
        match head.loss {
            LossKind::Ce => {
                for h in 0..head.num_heads() {
                    p.push(format!("head.ce.{h}.weight"), normal(&mut r, (k, d), 0.02));
                }
            }
            LossKind::Cosine => {
                for h in 0..head.num_heads() {
                    p.push(
                        format!("head.cosine.proj.{h}"),
                        xavier(&mut r, d, head.proj_dim),
                    );
                }
                p.push(
                    "head.cosine.codebook",
                    normal(&mut r, (k, head.proj_dim), 1.0),
                );
            }
        }
        Ok(Self {
            encoder,
            head,
            params: p,
        })
    }
}

impl<F: Float> Model<F> {
    pub fn cast<G: Float>(&self) -> Model<G> {
        Model {
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            params: self.params.cast(),
        }
    }

    /// Overwrites the cosine head's code table with `centroids` (`k × e`).
    pub fn set_code_table(&mut self, centroids: &Tensor<F>) -> Result<()> {
        let i = self
            .params
            .index_of("head.cosine.codebook")
            .ok_or_else(|| Error::invalid("model has no cosine head"))?;
        let t = self.params.tensor_mut(i);
        if t.dim() != centroids.dim() {
            return Err(Error::shape(format!(
                "code table is {:?}, centroids are {:?}",
                t.dim(),
                centroids.dim()
            )));
        }
        t.assign(centroids);
        Ok(())
    }

    pub fn head_start(&self) -> usize {
        BLOCK_BASE + PER_BLOCK * self.encoder.n_layers + 2
    }

    /// Indices of encoder-only parameters.
    pub fn encoder_param_range(&self) -> std::ops::Range<usize> {
        0..self.head_start()
    }

    pub fn block_param_names(layer: usize) -> impl Iterator<Item = String> {
        BLOCK_PARAMS
            .iter()
            .map(move |s| format!("blocks.{layer}.{s}"))
    }

    fn check_input(&self, input: &Tensor<F>) -> Result<()> {
        let (t, dim) = input.dim();
        if dim != self.encoder.input_dim {
            return Err(Error::shape(format!(
                "input dim {dim}, encoder expects {}",
                self.encoder.input_dim
            )));
        }
        if t > self.encoder.max_positions {
            return Err(Error::invalid(format!(
                "{t} frames exceed max_positions {}",
                self.encoder.max_positions
            )));
        }
        Ok(())
    }

    /// Records the encoder on `tape`. `pv` are this model's parameters
    /// registered on the same tape. Returns `n_layers + 1` hidden values.
    pub fn forward_on(
        &self,
        tape: &mut Tape<F>,
        pv: &[Var],
        input: &Tensor<F>,
        masked: &[usize],
        train: bool,
        rng: &mut StreamRng,
    ) -> Result<Vec<Var>> {
        self.check_input(input)?;
        let t = input.nrows();
        if let Some(&bad) = masked.iter().find(|&&i| i >= t) {
            return Err(Error::invalid(format!(
                "masked index {bad} out of range for {t} frames"
            )));
        }
        let cfg = &self.encoder;
        let p = cfg.dropout;
        let x = tape.constant(input.clone());
        let proj = tape.matmul(x, pv[INPUT_W]);
        let proj = tape.add_row(proj, pv[INPUT_B]);
        let feat = if masked.is_empty() {
            proj
        } else {
            tape.replace_rows(proj, masked, pv[MASK_EMB])
        };
        let positions: Vec<usize> = (0..t).collect();
        let pos = tape.gather_rows(pv[POS_EMB], &positions);
        let mut h = tape.add(feat, pos);
        let mut hidden = vec![feat];

        let dh = cfg.d_model / cfg.n_heads;
        let inv_sqrt: F = c(1.0 / (dh as f64).sqrt());
        for l in 0..cfg.n_layers {
            let b = &pv[BLOCK_BASE + l * PER_BLOCK..BLOCK_BASE + (l + 1) * PER_BLOCK];
            let a = tape.layer_norm(h, b[0], b[1]);
            let mut qkv = Vec::with_capacity(3);
            for i in 0..3 {
                let m = tape.matmul(a, b[2 + 2 * i]);
                let m = tape.add_row(m, b[3 + 2 * i]);
                qkv.push(tape.dropout(m, p, train, rng));
            }
            let (q, k, v) = (qkv[0], qkv[1], qkv[2]);
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let qh = tape.slice_cols(q, hd * dh, dh);
                let kh = tape.slice_cols(k, hd * dh, dh);
                let vh = tape.slice_cols(v, hd * dh, dh);
                let scores = tape.matmul_nt(qh, kh);
                let scores = tape.scale(scores, inv_sqrt);
                let attn = tape.softmax(scores);
                heads.push(tape.matmul(attn, vh));
            }
            let merged = tape.concat_cols(&heads);
            let o = tape.matmul(merged, b[8]);
            let o = tape.add_row(o, b[9]);
            h = tape.add(h, o);

            let a2 = tape.layer_norm(h, b[10], b[11]);
            let f1 = tape.matmul(a2, b[12]);
            let f1 = tape.add_row(f1, b[13]);
            let f1 = tape.gelu(f1);
            let f1 = tape.dropout(f1, p, train, rng);
            let f2 = tape.matmul(f1, b[14]);
            let f2 = tape.add_row(f2, b[15]);
            let f2 = tape.dropout(f2, p, train, rng);
            h = tape.add(h, f2);
            hidden.push(h);
        }
        let fl = BLOCK_BASE + cfg.n_layers * PER_BLOCK;
        let last = tape.layer_norm(h, pv[fl], pv[fl + 1]);
        *hidden.last_mut().unwrap() = last;
        Ok(hidden)
    }

    /// Summed prediction loss over the masked frames of one utterance, plus
    /// the number of correct argmax predictions. `targets` holds one label
    /// stream per head; with two heads the per-head losses are averaged.
    pub fn loss_on(
        &self,
        tape: &mut Tape<F>,
        pv: &[Var],
        output: Var,
        masked: &[usize],
        targets: &[&[u32]],
    ) -> Result<(Var, usize)> {
        let nh = self.head.num_heads();
        if targets.len() != nh {
            return Err(Error::invalid(format!(
                "{} target streams for {nh} heads",
                targets.len()
            )));
        }
        let hs = self.head_start();
        let mut total: Option<Var> = None;
        let mut correct = 0;
        for (h, labels) in targets.iter().enumerate() {
            let logits = match self.head.loss {
                LossKind::Ce => ce_logits(tape, output, pv[hs + h], masked),
                LossKind::Cosine => {
                    cosine_logits(tape, output, pv[hs + h], pv[hs + nh], self.head.tau, masked)
                }
            };
            let s = masked_ce(tape, logits, tape.shape(output).0, masked, labels)?;
            for (row, &t) in tape.value(logits).rows().into_iter().zip(masked) {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold(
                        (0, F::neg_infinity()),
                        |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                    )
                    .0;
                if arg == labels[t] as usize {
                    correct += 1;
                }
            }
            total = Some(match total {
                Some(t) => tape.add(t, s),
                None => s,
            });
        }
        let total = total.expect("at least one head");
        let loss = if nh > 1 {
            tape.scale(total, c(1.0 / nh as f64))
        } else {
            total
        };
        Ok((loss, correct))
    }

    /// Inference pass (dropout off) returning every layer as `f32`.
    pub fn forward(&self, f: &FeatureMatrix, masked: Option<&[usize]>) -> Result<EncoderOutput> {
        let input = f.data.mapv(|v| F::from(v).expect("cast"));
        let mut tape = Tape::new();
        let pv: Vec<Var> = (0..self.params.len())
            .map(|i| tape.constant(self.params.tensor(i).clone()))
            .collect();
        let masked = masked.unwrap_or(&[]);
        let mut r = rng::stream(0, "unused", &[]);
        let hidden = self.forward_on(&mut tape, &pv, &input, masked, false, &mut r)?;
        Ok(EncoderOutput {
            hidden: hidden
                .iter()
                .map(|h| tape.value(*h).mapv(|v| v.to_f32().expect("cast")))
                .collect(),
            masked_indices: masked.to_vec(),
            frame_period_ms: f.frame_period_ms,
        })
    }
}
