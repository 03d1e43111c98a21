use serde::{Deserialize, Serialize};

use crate::diff::{c, Float, Tape, Var};
use crate::error::{Error, Result};

/// Prediction objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Softmax over cosine similarities between a projection of the output
    /// and a learnable code embedding table, divided by a temperature.
    Cosine,
    /// Plain cross entropy over a linear map of the output.
    Ce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub loss: LossKind,
    /// Number of target classes `k`.
    pub num_classes: usize,
    /// Predict the labels of both 10 ms halves of each 20 ms frame.
    pub dual: bool,
    /// Projection width `e` of the cosine head.
    pub proj_dim: usize,
    pub tau: f64,
    /// Starting value of the cosine head's code table.
    pub codebook_init: CodebookInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CodebookInit {
    #[default]
    Random,
    /// Copy the k-means centroids the targets came from; their width must
    /// equal `proj_dim`.
    Kmeans,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            num_classes: 100,
            dual: false,
            proj_dim: 32,
            tau: 0.1,
            codebook_init: CodebookInit::Random,
        }
    }
}

impl HeadConfig {
    pub fn num_heads(&self) -> usize {
        if self.dual {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "head needs k >= 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.loss == LossKind::Cosine && (!(self.tau > 0.0) || self.proj_dim == 0) {
            return Err(Error::invalid("cosine head needs tau > 0 and proj_dim > 0"));
        }
        Ok(())
    }
}

fn check_targets(labels: &[u32], rows: usize, k: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!(
            "{} labels for {rows} output frames",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for k = {k}"
        )));
    }
    Ok(())
}

fn masked_targets(labels: &[u32], masked: &[usize]) -> Vec<usize> {
    masked.iter().map(|&t| labels[t] as usize).collect()
}

/// Logits `o_t · wᵀ` of the masked frames (`w` is `k × d`).
pub(crate) fn ce_logits<F: Float>(tape: &mut Tape<F>, o: Var, w: Var, masked: &[usize]) -> Var {
    let rows = tape.gather_rows(o, masked);
    tape.matmul_nt(rows, w)
}

/// Logits `cos(W·o_t, m_c) / τ` of the masked frames.
pub(crate) fn cosine_logits<F: Float>(
    tape: &mut Tape<F>,
    o: Var,
    proj: Var,
    codebook: Var,
    tau: f64,
    masked: &[usize],
) -> Var {
    let rows = tape.gather_rows(o, masked);
    let projected = tape.matmul(rows, proj);
    let cos = tape.cosine_sim(projected, codebook);
    tape.scale(cos, c(1.0 / tau))
}

pub(crate) fn masked_ce<F: Float>(
    tape: &mut Tape<F>,
    logits: Var,
    rows: usize,
    masked: &[usize],
    labels: &[u32],
) -> Result<Var> {
    check_targets(labels, rows, tape.shape(logits).1)?;
    Ok(tape.cross_entropy(logits, &masked_targets(labels, masked)))
}

/// Summed cross entropy of `o · wᵀ` at the masked frames (`w` is `k × d`).
pub fn ce_loss_sum<F: Float>(
    tape: &mut Tape<F>,
    o: Var,
    w: Var,
    masked: &[usize],
    labels: &[u32],
) -> Result<Var> {
    check_targets(labels, tape.shape(o).0, tape.shape(w).0)?;
    let logits = ce_logits(tape, o, w, masked);
    masked_ce(tape, logits, tape.shape(o).0, masked, labels)
}

/// Summed loss `-log softmax_c(cos(W·o_t, m_c) / τ)` at the masked frames.
/// `proj` is `d × e`, `codebook` is `k × e`.
pub fn cosine_loss_sum<F: Float>(
    tape: &mut Tape<F>,
    o: Var,
    proj: Var,
    codebook: Var,
    tau: f64,
    masked: &[usize],
    labels: &[u32],
) -> Result<Var> {
    check_targets(labels, tape.shape(o).0, tape.shape(codebook).0)?;
    let logits = cosine_logits(tape, o, proj, codebook, tau, masked);
    masked_ce(tape, logits, tape.shape(o).0, masked, labels)
}

fn mean_over<F: Float>(tape: &mut Tape<F>, sum: Var, count: usize) -> Result<Var> {
    if count == 0 {
        return Err(Error::invalid("loss needs at least one masked frame"));
    }
    Ok(tape.scale(sum, c(1.0 / count as f64)))
}

/// Mean cross entropy over masked frames. With two heads and two label
/// streams (dual targets) the per-head losses are averaged.
pub fn loss_ce<F: Float>(
    tape: &mut Tape<F>,
    o: Var,
    heads: &[Var],
    masked: &[usize],
    labels: &[&[u32]],
) -> Result<Var> {
    if heads.is_empty() || heads.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} heads for {} label streams",
            heads.len(),
            labels.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (w, l) in heads.iter().zip(labels) {
        let s = ce_loss_sum(tape, o, *w, masked, l)?;
        total = Some(match total {
            Some(t) => tape.add(t, s),
            None => s,
        });
    }
    let avg = tape.scale(total.unwrap(), c(1.0 / heads.len() as f64));
    mean_over(tape, avg, masked.len())
}

/// Mean cosine-head loss over masked frames.
pub fn loss_cosine<F: Float>(
    tape: &mut Tape<F>,
    o: Var,
    proj: Var,
    codebook: Var,
    tau: f64,
    masked: &[usize],
    labels: &[u32],
) -> Result<Var> {
    let s = cosine_loss_sum(tape, o, proj, codebook, tau, masked, labels)?;
    mean_over(tape, s, masked.len())
}
