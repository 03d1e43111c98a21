use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{Adam, Checkpoint, Stage, TrainConfig, TrainUtt};
use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{sample_mask, Model};
use crate::rng;

pub const METRICS_HEADER: &str = "step,epoch,loss,masked_acc,lr";

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    /// Mean loss over the masked frames of the effective batch.
    pub loss: f64,
    pub masked_acc: f64,
    pub lr: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.epoch, self.loss, self.masked_acc, self.lr
        )
    }
}

struct UttResult {
    grads: Vec<Option<Tensor<f32>>>,
    loss_sum: f64,
    correct: usize,
}

/// Single owner of the model and optimizer during pre-training.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub adam: Adam,
    pub step: u64,
    pub epoch: u64,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(
            &model.params,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
            cfg.weight_decay,
        );
        Ok(Self {
            model,
            cfg,
            adam,
            step: 0,
            epoch: 0,
        })
    }

    pub fn masked_frames(&self, epoch: u64, pos: u64, num_frames: usize) -> Vec<usize> {
        let mut r = rng::stream(self.cfg.seed, &self.cfg.mask.stream, &[epoch, pos]);
        sample_mask(num_frames, &self.cfg.mask, &mut r)
    }

    fn utt_grads(
        &self,
        pos: u64,
        utt: &TrainUtt,
        masked: &[usize],
        norm: f32,
    ) -> Result<UttResult> {
        let mut tape = Tape::new();
        let pv = self.model.params.register(&mut tape);
        let mut r = rng::stream(self.cfg.seed, "dropout", &[self.epoch, pos]);
        let hidden = self
            .model
            .forward_on(&mut tape, &pv, &utt.input, masked, true, &mut r)?;
        let targets: Vec<&[u32]> = utt.targets.iter().map(|t| t.as_slice()).collect();
        let (loss, correct) =
            self.model
                .loss_on(&mut tape, &pv, *hidden.last().unwrap(), masked, &targets)?;
        let loss_sum = tape.scalar(loss) as f64;
        let mut g = tape.backward_scaled(loss, norm)?;
        Ok(UttResult {
            grads: pv.iter().map(|&v| g.take(v)).collect(),
            loss_sum,
            correct,
        })
    }

    /// One optimizer step over an effective batch. Items are `(position in
    /// epoch, utterance)`; positions key the mask and dropout streams, so
    /// the same items yield the same update however they are micro-batched.
    pub fn step_on(&mut self, batch: &[(u64, &TrainUtt)]) -> Result<StepMetrics> {
        let masks: Vec<Vec<usize>> = batch
            .iter()
            .map(|(pos, u)| self.masked_frames(self.epoch, *pos, u.num_frames()))
            .collect();
        let n_masked: usize = masks.iter().map(|m| m.len()).sum();
        if n_masked == 0 {
            return Err(Error::invalid("effective batch has no masked frames"));
        }
        let norm = 1.0 / n_masked as f32;
        let np = self.model.params.len();
        let mut acc: Vec<Option<Tensor<f32>>> = vec![None; np];
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        let mut bad = Vec::new();
        let items: Vec<usize> = (0..batch.len()).collect();
        for micro in items.chunks(self.cfg.batch_utts) {
            let results: Vec<Result<UttResult>> = micro
                .par_iter()
                .map(|&i| self.utt_grads(batch[i].0, batch[i].1, &masks[i], norm))
                .collect();
            for (&i, res) in micro.iter().zip(results) {
                let res = res?;
                if !res.loss_sum.is_finite() {
                    bad.push(batch[i].1.utt_id.clone());
                }
                loss_sum += res.loss_sum;
                correct += res.correct;
                for (a, g) in acc.iter_mut().zip(res.grads) {
                    match (a.as_mut(), g) {
                        (Some(a), Some(g)) => *a += &g,
                        (None, Some(g)) => *a = Some(g),
                        _ => {}
                    }
                }
            }
        }
        let loss = loss_sum / n_masked as f64;
        if !bad.is_empty() || !loss.is_finite() {
            if bad.is_empty() {
                bad = batch.iter().map(|(_, u)| u.utt_id.clone()).collect();
            }
            return Err(Error::Diverged {
                step: self.step,
                utt_ids: bad,
                detail: format!("loss {loss}"),
            });
        }
        self.adam.update(&mut self.model.params, &acc, self.cfg.lr);
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            epoch: self.epoch,
            loss,
            masked_acc: correct as f64 / (n_masked * self.model.head.num_heads()) as f64,
            lr: self.cfg.lr,
        })
    }

    /// Seeded shuffle of utterance indices for the current epoch.
    pub fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(self.cfg.seed, "shuffle", &[self.epoch]));
        order
    }

    fn steps_exhausted(&self) -> bool {
        self.cfg.max_steps.is_some_and(|m| self.step >= m)
    }

    /// Runs the current epoch and advances the epoch counter. Returns false
    /// when the step budget ran out before the epoch finished.
    pub fn run_epoch(
        &mut self,
        data: &[TrainUtt],
        on_step: &mut dyn FnMut(&StepMetrics) -> Result<()>,
    ) -> Result<bool> {
        let order = self.epoch_order(data.len());
        let eff = self.cfg.effective_batch();
        for (b, chunk) in order.chunks(eff).enumerate() {
            if self.steps_exhausted() {
                return Ok(false);
            }
            let batch: Vec<(u64, &TrainUtt)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| ((b * eff + j) as u64, &data[i]))
                .collect();
            let m = self.step_on(&batch)?;
            on_step(&m)?;
        }
        self.epoch += 1;
        Ok(true)
    }
}

/// Where pre-training writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct PretrainOutputs {
    pub metrics_csv: Option<PathBuf>,
    /// One checkpoint per epoch, `epoch_XXXX.mhck`.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Trains from `start` (initialized model plus provenance) until
/// `start.train.epochs` epochs or `max_steps` steps.
pub fn pretrain(start: Checkpoint, data: &[TrainUtt], out: &PretrainOutputs) -> Result<Checkpoint> {
    let cfg = start.train.clone();
    let nh = start.model.head.num_heads();
    if start.plan.stage == Stage::Two && nh != 1 {
        return Err(Error::invalid("stage 2 uses a single prediction head"));
    }
    if start.model.head.loss != cfg.loss || start.model.head.dual != cfg.dual_targets {
        return Err(Error::invalid(
            "model head does not match train.loss / train.dual_targets",
        ));
    }
    if data.is_empty() {
        return Err(Error::invalid("no training utterances"));
    }
    let k = start.model.head.num_classes as u32;
    for u in data {
        if u.targets.len() != nh || u.targets.iter().any(|t| t.len() != u.num_frames()) {
            return Err(Error::shape(format!(
                "{}: targets do not match frames and heads",
                u.utt_id
            )));
        }
        if let Some(&bad) = u.targets.iter().flatten().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "{}: label {bad} >= k = {k}",
                u.utt_id
            )));
        }
    }
    let mut trainer = Trainer::new(start.model.clone(), cfg.clone())?;
    trainer.step = start.step;
    trainer.epoch = start.epoch;
    if let Some(a) = &start.adam {
        trainer.adam = a.clone();
    }
    let mut metrics = match &out.metrics_csv {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
            writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(p, e))?;
            Some((p.clone(), w))
        }
        None => None,
    };
    if let Some(dir) = &out.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let snapshot = |t: &Trainer| Checkpoint {
        model: t.model.clone(),
        step: t.step,
        epoch: t.epoch,
        adam: Some(t.adam.clone()),
        ..start.clone()
    };
    while (trainer.epoch as usize) < cfg.epochs && !trainer.steps_exhausted() {
        let finished = trainer.run_epoch(data, &mut |m| {
            if let Some((p, w)) = metrics.as_mut() {
                writeln!(w, "{}", m.csv_row()).map_err(|e| Error::io(p.as_path(), e))?;
            }
            Ok(())
        })?;
        if let Some((p, w)) = metrics.as_mut() {
            w.flush().map_err(|e| Error::io(p.as_path(), e))?;
        }
        if finished {
            if let Some(dir) = &out.checkpoint_dir {
                snapshot(&trainer).save(dir.join(format!("epoch_{:04}.mhck", trainer.epoch)))?;
            }
        }
    }
    Ok(snapshot(&trainer))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub masked_acc: f64,
    pub masked_frames: usize,
}

/// Masked-prediction loss and accuracy with dropout off. Masks come from the
/// `eval` stream of `seed`, keyed by utterance position.
pub fn evaluate(
    model: &Model,
    data: &[TrainUtt],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EvalMetrics> {
    let per: Vec<Result<(f64, usize, usize)>> = data
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut r = rng::stream(seed, "eval", &[i as u64]);
            let masked = sample_mask(u.num_frames(), &cfg.mask, &mut r);
            let mut tape = Tape::new();
            let pv: Vec<_> = (0..model.params.len())
                .map(|j| tape.constant(model.params.tensor(j).clone()))
                .collect();
            let hidden = model.forward_on(&mut tape, &pv, &u.input, &masked, false, &mut r)?;
            let targets: Vec<&[u32]> = u.targets.iter().map(|t| t.as_slice()).collect();
            let (loss, correct) =
                model.loss_on(&mut tape, &pv, *hidden.last().unwrap(), &masked, &targets)?;
            Ok((tape.scalar(loss) as f64, correct, masked.len()))
        })
        .collect();
    let (mut loss, mut correct, mut n) = (0.0, 0, 0);
    for p in per {
        let (l, c, m) = p?;
        loss += l;
        correct += c;
        n += m;
    }
    if n == 0 {
        return Err(Error::invalid("no masked frames to evaluate"));
    }
    Ok(EvalMetrics {
        loss: loss / n as f64,
        masked_acc: correct as f64 / (n * model.head.num_heads()) as f64,
        masked_frames: n,
    })
}

/// Accuracy of always predicting the most frequent training label, per
/// head stream, measured over every frame of `heldout`.
pub fn unigram_baseline(train: &[TrainUtt], heldout: &[TrainUtt]) -> f64 {
    let nh = train.first().map_or(0, |u| u.targets.len());
    let (mut hit, mut total) = (0usize, 0usize);
    for h in 0..nh {
        let mut counts = std::collections::BTreeMap::<u32, usize>::new();
        for l in train.iter().flat_map(|u| &u.targets[h]) {
            *counts.entry(*l).or_default() += 1;
        }
        let top = counts
            .iter()
            .max_by_key(|(l, c)| (**c, std::cmp::Reverse(**l)))
            .map(|(l, _)| *l);
        for l in heldout.iter().flat_map(|u| &u.targets[h]) {
            hit += (Some(*l) == top) as usize;
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}
