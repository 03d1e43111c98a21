use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{F0Track, LayerWeights};
use crate::corpus::AlignmentFile;
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mel::FeatureMatrix;
use crate::model::{Model, ParamSet};
use crate::rng;
use crate::trainer::{Adam, Checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    PhoneFrame,
    Speaker,
    F0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub task: ProbeTask,
    /// Learning rates tried; the one with the best dev metric is kept.
    pub lr_grid: Vec<f64>,
    /// Full-batch epochs per learning rate.
    pub epochs: usize,
    /// Fraction of utterances held out for the reported metric.
    pub test_fraction: f64,
    /// Fraction of utterances used to pick the learning rate.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            task: ProbeTask::PhoneFrame,
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            epochs: 150,
            test_fraction: 0.2,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn new(task: ProbeTask) -> Self {
        Self {
            task,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|l| !(*l > 0.0)) {
            problems.push("lr_grid must hold positive learning rates".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        let f = self.test_fraction + self.dev_fraction;
        if !(self.test_fraction > 0.0 && self.dev_fraction >= 0.0 && f < 1.0) {
            problems
                .push("need test_fraction > 0, dev_fraction >= 0 and their sum < 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "probe config: {}",
                problems.join("; ")
            )))
        }
    }
}

/// Frozen activations of one utterance: every layer, equal shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeInput {
    pub utt_id: String,
    pub layers: Vec<Array2<f32>>,
    pub frame_period_ms: f32,
}

impl ProbeInput {
    fn num_frames(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }
}

/// All hidden layers of `model` for each input (layer 0 is "feat").
pub fn upstream_layers(model: &Model, inputs: &[FeatureMatrix]) -> Result<Vec<ProbeInput>> {
    inputs
        .par_iter()
        .map(|f| {
            Ok(ProbeInput {
                utt_id: f.utt_id.clone(),
                layers: model.forward(f, None)?.hidden,
                frame_period_ms: f.frame_period_ms,
            })
        })
        .collect()
}

/// Treats the features themselves as a one-layer upstream.
pub fn features_as_upstream(inputs: &[FeatureMatrix]) -> Vec<ProbeInput> {
    inputs
        .iter()
        .map(|f| ProbeInput {
            utt_id: f.utt_id.clone(),
            layers: vec![f.data.clone()],
            frame_period_ms: f.frame_period_ms,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum ProbeLabels {
    /// Phone alignments at 10 ms or the upstream frame period.
    Phones(AlignmentFile),
    Speakers(HashMap<String, usize>),
    /// Pitch tracks on the 10 ms grid.
    F0(HashMap<String, F0Track>),
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub task: ProbeTask,
    /// Frame error rate, utterance error rate or log-F0 MSE on the test split.
    pub test_metric: f64,
    pub dev_metric: f64,
    pub train_metric: f64,
    pub lr: f64,
    pub weights: LayerWeights,
    /// `head.weight` (d×out) and `head.bias` (1×out).
    pub head: ParamSet<f32>,
    pub test_items: usize,
}

/// Per-utterance supervision at the upstream frame rate.
#[derive(Debug, Clone)]
enum Target {
    /// `(frame, class)` pairs.
    Frames(Vec<(usize, usize)>),
    Utterance(usize),
    /// `(frame, log F0)` pairs over voiced frames.
    Values(Vec<(usize, f32)>),
}

impl Target {
    fn count(&self) -> usize {
        match self {
            Target::Frames(v) => v.len(),
            Target::Utterance(_) => 1,
            Target::Values(v) => v.len(),
        }
    }
}

fn targets(
    data: &[ProbeInput],
    labels: &ProbeLabels,
    task: ProbeTask,
) -> Result<(Vec<Target>, usize)> {
    let mismatch = || Error::invalid(format!("{task:?} probe given mismatched labels"));
    match (task, labels) {
        (ProbeTask::PhoneFrame, ProbeLabels::Phones(ali)) => {
            let period = data
                .first()
                .map_or(ali.frame_period_ms, |d| d.frame_period_ms as f64);
            let ali = ali.at_frame_period(period)?;
            let classes = ali.num_phones();
            let t = data
                .iter()
                .map(|d| {
                    let a = ali
                        .get(&d.utt_id)
                        .ok_or_else(|| Error::invalid(format!("no alignment for {}", d.utt_id)))?;
                    Ok(Target::Frames(
                        a.frame_labels(d.num_frames())
                            .into_iter()
                            .enumerate()
                            .filter_map(|(t, p)| p.map(|p| (t, p as usize)))
                            .collect(),
                    ))
                })
                .collect::<Result<_>>()?;
            Ok((t, classes))
        }
        (ProbeTask::Speaker, ProbeLabels::Speakers(spk)) => {
            let classes = spk.values().max().map_or(0, |m| m + 1);
            let t = data
                .iter()
                .map(|d| {
                    spk.get(&d.utt_id)
                        .map(|&s| Target::Utterance(s))
                        .ok_or_else(|| Error::invalid(format!("no speaker for {}", d.utt_id)))
                })
                .collect::<Result<_>>()?;
            Ok((t, classes))
        }
        (ProbeTask::F0, ProbeLabels::F0(tracks)) => {
            let t = data
                .iter()
                .map(|d| {
                    let tr = tracks
                        .get(&d.utt_id)
                        .ok_or_else(|| Error::invalid(format!("no F0 track for {}", d.utt_id)))?;
                    let step = (d.frame_period_ms / 10.0).round().max(1.0) as usize;
                    Ok(Target::Values(
                        (0..d.num_frames())
                            .filter_map(|t| {
                                let s = t * step;
                                (s < tr.len() && tr.voiced[s]).then(|| (t, tr.log_f0[s]))
                            })
                            .collect(),
                    ))
                })
                .collect::<Result<_>>()?;
            Ok((t, 1))
        }
        _ => Err(mismatch()),
    }
}

/// Seeded train/dev/test partition of utterance indices.
pub fn split_utterances(
    n: usize,
    dev_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "probe-split", &[]));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1.min(n), n);
    let n_dev = ((n as f64 * dev_fraction).round() as usize).min(n - n_test);
    let test = idx[..n_test].to_vec();
    let dev = idx[n_test..n_test + n_dev].to_vec();
    let mut train = idx[n_test + n_dev..].to_vec();
    train.sort_unstable();
    (train, dev, test)
}

struct Probe<'a> {
    task: ProbeTask,
    data: &'a [ProbeInput],
    targets: &'a [Target],
}

const W_LOGITS: usize = 0;
const HEAD_W: usize = 1;
const HEAD_B: usize = 2;

impl Probe<'_> {
    /// Summed loss and the head output for utterance `i`.
    fn record(&self, tape: &mut Tape<f32>, pv: &[Var], i: usize) -> (Var, Var) {
        let xs: Vec<Var> = self.data[i]
            .layers
            .iter()
            .map(|h| tape.constant(h.clone()))
            .collect();
        let w = tape.softmax(pv[W_LOGITS]);
        let mixed = tape.weighted_sum(w, &xs);
        let pooled = match self.task {
            ProbeTask::Speaker => tape.mean_rows(mixed),
            _ => mixed,
        };
        let out = tape.matmul(pooled, pv[HEAD_W]);
        let out = tape.add_row(out, pv[HEAD_B]);
        let loss = match &self.targets[i] {
            Target::Frames(f) => {
                let rows: Vec<usize> = f.iter().map(|p| p.0).collect();
                let cls: Vec<usize> = f.iter().map(|p| p.1).collect();
                let sel = tape.gather_rows(out, &rows);
                tape.cross_entropy(sel, &cls)
            }
            Target::Utterance(s) => tape.cross_entropy(out, &[*s]),
            Target::Values(v) => {
                let rows: Vec<usize> = v.iter().map(|p| p.0).collect();
                let y = Array2::from_shape_vec((v.len(), 1), v.iter().map(|p| p.1).collect())
                    .expect("sized");
                let sel = tape.gather_rows(out, &rows);
                let y = tape.constant(y);
                let d = tape.sub(sel, y);
                let sq = tape.mul(d, d);
                tape.sum(sq)
            }
        };
        (loss, out)
    }

    fn gradient(&self, params: &ParamSet<f32>, items: &[usize]) -> Vec<Option<Tensor<f32>>> {
        let n: usize = items.iter().map(|&i| self.targets[i].count()).sum();
        let scale = 1.0 / n.max(1) as f32;
        let grads: Vec<Vec<Option<Tensor<f32>>>> = items
            .par_iter()
            .map(|&i| {
                let mut tape = Tape::new();
                let pv = params.register(&mut tape);
                let (loss, _) = self.record(&mut tape, &pv, i);
                let mut g = tape.backward_scaled(loss, scale).expect("scalar loss");
                pv.iter().map(|&v| g.take(v)).collect()
            })
            .collect();
        let mut acc: Vec<Option<Tensor<f32>>> = vec![None; params.len()];
        for g in grads {
            for (a, g) in acc.iter_mut().zip(g) {
                match (a.as_mut(), g) {
                    (Some(a), Some(g)) => *a += &g,
                    (None, Some(g)) => *a = Some(g),
                    _ => {}
                }
            }
        }
        acc
    }

    /// Error rate (classification) or MSE (regression) over `items`.
    fn metric(&self, params: &ParamSet<f32>, items: &[usize]) -> f64 {
        let per: Vec<(f64, usize)> = items
            .par_iter()
            .map(|&i| {
                let mut tape = Tape::new();
                let pv: Vec<Var> = (0..params.len())
                    .map(|j| tape.constant(params.tensor(j).clone()))
                    .collect();
                let (loss, out) = self.record(&mut tape, &pv, i);
                let out = tape.value(out);
                let argmax = |r: usize| {
                    out.row(r)
                        .iter()
                        .enumerate()
                        .fold(
                            (0, f32::NEG_INFINITY),
                            |b, (k, &v)| if v > b.1 { (k, v) } else { b },
                        )
                        .0
                };
                match &self.targets[i] {
                    Target::Frames(f) => (
                        f.iter().filter(|(t, c)| argmax(*t) != *c).count() as f64,
                        f.len(),
                    ),
                    Target::Utterance(s) => ((argmax(0) != *s) as usize as f64, 1),
                    Target::Values(v) => (tape.scalar(loss) as f64, v.len()),
                }
            })
            .collect();
        let (num, den) = per.iter().fold((0.0, 0), |a, p| (a.0 + p.0, a.1 + p.1));
        if den == 0 {
            0.0
        } else {
            num / den as f64
        }
    }
}

/// Mean regression target over `items`; the F0 head starts from it.
fn mean_target(targets: &[Target], items: &[usize]) -> Option<f32> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for &i in items {
        if let Target::Values(v) = &targets[i] {
            sum += v.iter().map(|p| p.1 as f64).sum::<f64>();
            n += v.len();
        }
    }
    (n > 0).then(|| (sum / n as f64) as f32)
}

fn init_params(layers: usize, dim: usize, out: usize) -> ParamSet<f32> {
    let mut p = ParamSet::new();
    p.push("layer_logits", Array2::zeros((1, layers)));
    p.push("head.weight", Array2::zeros((dim, out)));
    p.push("head.bias", Array2::zeros((1, out)));
    p
}

/// Trains layer weights and a linear head on frozen activations.
pub fn probe_train(
    data: &[ProbeInput],
    labels: &ProbeLabels,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("no probe data"))?;
    let (nl, dim) = (
        first.layers.len(),
        first.layers.first().map_or(0, |l| l.ncols()),
    );
    for d in data {
        if d.layers.len() != nl
            || d.layers
                .iter()
                .any(|l| l.ncols() != dim || l.nrows() != d.num_frames())
        {
            return Err(Error::shape(format!(
                "{}: layer shapes differ from the first utterance",
                d.utt_id
            )));
        }
    }
    let (tg, classes) = targets(data, labels, cfg.task)?;
    if classes == 0 {
        return Err(Error::invalid("labels define no classes"));
    }
    let (train, dev, test) =
        split_utterances(data.len(), cfg.dev_fraction, cfg.test_fraction, cfg.seed);
    if train.is_empty() {
        return Err(Error::invalid(
            "no training utterances left after the split",
        ));
    }
    let probe = Probe {
        task: cfg.task,
        data,
        targets: &tg,
    };
    let mut best: Option<(f64, f64, ParamSet<f32>)> = None;
    for &lr in &cfg.lr_grid {
        let mut p = init_params(nl, dim, classes);
        if let Some(mean) = mean_target(&tg, &train) {
            p.get_mut("head.bias").expect("bias").fill(mean);
        }
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..cfg.epochs {
            let g = probe.gradient(&p, &train);
            adam.update(&mut p, &g, lr);
        }
        let score = if dev.is_empty() {
            probe.metric(&p, &train)
        } else {
            probe.metric(&p, &dev)
        };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, lr, p));
        }
    }
    let (dev_metric, lr, p) = best.expect("non-empty grid");
    Ok(ProbeResult {
        task: cfg.task,
        test_metric: probe.metric(&p, &test),
        dev_metric,
        train_metric: probe.metric(&p, &train),
        lr,
        weights: LayerWeights {
            logits: p.tensor(W_LOGITS).iter().map(|&v| v as f64).collect(),
        },
        head: {
            let mut h = ParamSet::new();
            h.push("head.weight", p.tensor(HEAD_W).clone());
            h.push("head.bias", p.tensor(HEAD_B).clone());
            h
        },
        test_items: test.iter().map(|&i| tg[i].count()).sum(),
    })
}

/// Probes a checkpoint's encoder, checking that the upstream is unchanged
/// (same serialized hash) afterwards.
pub fn probe_checkpoint(
    ckpt: &Checkpoint,
    inputs: &[FeatureMatrix],
    labels: &ProbeLabels,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let before = ckpt.sha256();
    let data = upstream_layers(&ckpt.model, inputs)?;
    let res = probe_train(&data, labels, cfg)?;
    let after = ckpt.sha256();
    if before != after {
        return Err(Error::Numerical(format!(
            "upstream changed during probing: {before} -> {after}"
        )));
    }
    Ok(res)
}
