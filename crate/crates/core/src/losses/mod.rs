//! Training objectives.

pub mod objective;

use serde::{Deserialize, Serialize};

pub use objective::{batch_objective, ObjectiveConfig, TrainItem};

use crate::error::{CignError, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Probabilities are clamped into `[P_CLAMP, 1 - P_CLAMP]` before logs.
pub const P_CLAMP: f64 = 1e-7;
pub const DEFAULT_TAU: f64 = 0.07;

/// Which terms make up the contrastive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorVariant {
    /// New-class terms only.
    #[default]
    AsWritten,
    /// New-class terms plus the positive pair (InfoNCE form).
    WithPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl_old_tokens: f64,
    pub ce_new_tokens: f64,
    pub bce_audio: f64,
    pub bce_visual: f64,
    pub ctl_audio: f64,
    pub ctl_visual: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.kl_old_tokens
            + self.ce_new_tokens
            + self.bce_audio
            + self.bce_visual
            + self.ctl_audio
            + self.ctl_visual
    }
}

/// Outcome of [`kl_token_distill`].
#[derive(Debug, Clone, Copy)]
pub struct Distillation {
    pub loss: Var,
    /// False when there is no previous-task snapshot and `loss` is exactly 0.
    pub active: bool,
}

/// `Σ_i KL(softmax(c_i) ‖ softmax(c_i_prev))` over the old tokens, each
/// token normalized along the embedding dimension.
pub fn kl_token_distill(
    tape: &mut Tape,
    tokens: Var,
    frozen_old: Option<&Tensor>,
) -> Result<Distillation> {
    let Some(frozen) = frozen_old else {
        return Ok(Distillation {
            loss: tape.constant(Tensor::scalar(0.0)),
            active: false,
        });
    };
    let (old, dim) = frozen.dims2();
    if tape.shape(tokens)[1] != dim || tape.shape(tokens)[0] < old {
        return Err(CignError::Shape {
            op: "kl_token_distill",
            lhs: tape.shape(tokens).to_vec(),
            rhs: frozen.shape().to_vec(),
        });
    }
    let current = tape.slice_rows(tokens, 0, old)?;
    let log_p = tape.log_softmax(current, 1)?;
    let p = tape.exp(log_p);
    let log_q = tape.constant(log_softmax_rows(frozen));
    let diff = tape.sub(log_p, log_q)?;
    let weighted = tape.mul(p, diff)?;
    Ok(Distillation {
        loss: tape.sum_all(weighted),
        active: true,
    })
}

fn log_softmax_rows(t: &Tensor) -> Tensor {
    let (rows, cols) = t.dims2();
    let mut out = t.clone();
    for r in 0..rows {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Row-wise `Σ_r KL(p_r ‖ q_r)` of already normalized distributions, with
/// `0 · log 0 = 0`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(CignError::Shape {
            op: "kl_divergence",
            lhs: p.shape().to_vec(),
            rhs: q.shape().to_vec(),
        });
    }
    let mut total = 0.0;
    for (&a, &b) in p.data().iter().zip(q.data()) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(total)
}

/// Identity targets: new token `i` belongs to the task's `i`-th class slot.
pub fn slot_targets(new_tokens: usize, task_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[new_tokens, task_classes]);
    for i in 0..new_tokens.min(task_classes) {
        t.data_mut()[i * task_classes + i] = 1.0;
    }
    t
}

/// `Σ_i -log e_i[target_i]` for one-hot target rows.
pub fn ce_new_tokens(tape: &mut Tape, e: Var, targets: &Tensor) -> Result<Var> {
    if tape.shape(e) != targets.shape() {
        return Err(CignError::Shape {
            op: "ce_new_tokens",
            lhs: tape.shape(e).to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    let (rows, _) = targets.dims2();
    for r in 0..rows {
        let row = targets.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(CignError::Domain {
                op: "ce_new_tokens",
                detail: format!("target row {r} is not one-hot"),
            });
        }
    }
    let e = tape.clamp(e, P_CLAMP, 1.0);
    let log_e = tape.log(e)?;
    let mask = tape.constant(targets.clone());
    let picked = tape.mul(log_e, mask)?;
    let s = tape.sum_all(picked);
    Ok(tape.neg(s))
}

/// `Σ_i -[y_i log p_i + (1 - y_i) log(1 - p_i)]` with `p` clamped.
pub fn bce_class(tape: &mut Tape, p: Var, y: &Tensor) -> Result<Var> {
    if tape.value(p).numel() != y.numel() {
        return Err(CignError::Shape {
            op: "bce_class",
            lhs: tape.shape(p).to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let y = y.reshape(tape.shape(p))?;
    let p = tape.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    let log_p = tape.log(p)?;
    let neg_p = tape.neg(p);
    let q = tape.shift(neg_p, 1.0);
    let log_q = tape.log(q)?;
    let not_y = {
        let mut t = y.clone();
        t.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        tape.constant(t)
    };
    let yv = tape.constant(y);
    let a = tape.mul(yv, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let s = tape.add(a, b)?;
    let total = tape.sum_all(s);
    Ok(tape.neg(total))
}

/// Inputs of the continual contrastive term for one modality.
///
/// Row `n` of `prev` and `curr_old` are the previous- and current-model
/// embeddings of the same old-class sample. `curr_new` are current-model
/// embeddings of new-class samples, labelled by `new_classes`; rows that
/// share a class are max-pooled into one similarity.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveBatch<'a> {
    pub prev: &'a [Var],
    pub curr_old: &'a [Var],
    pub curr_new: &'a [Var],
    pub new_classes: &'a [usize],
    pub tau: f64,
    pub denominator: DenominatorVariant,
}

pub fn continual_contrastive(tape: &mut Tape, batch: ContrastiveBatch<'_>) -> Result<Var> {
    let n = batch.prev.len();
    if n == 0 || batch.curr_old.len() != n {
        return Err(CignError::config(format!(
            "contrastive batch needs matching old rows, got {} and {}",
            n,
            batch.curr_old.len()
        )));
    }
    if batch.curr_new.is_empty() || batch.curr_new.len() != batch.new_classes.len() {
        return Err(CignError::config("contrastive batch needs labelled negatives"));
    }
    if !(batch.tau > 0.0) {
        return Err(CignError::config(format!("temperature must be positive, got {}", batch.tau)));
    }
    let mut classes: Vec<usize> = Vec::new();
    for &c in batch.new_classes {
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    let inv_tau = 1.0 / batch.tau;
    let mut per_row = Vec::with_capacity(n);
    for (&prev, &old) in batch.prev.iter().zip(batch.curr_old) {
        let pos = tape.cosine_sim(prev, old)?;
        let mut logits = Vec::with_capacity(classes.len() + 1);
        for &c in &classes {
            let sims = batch
                .curr_new
                .iter()
                .zip(batch.new_classes)
                .filter(|(_, &k)| k == c)
                .map(|(&m, _)| tape.cosine_sim(prev, m))
                .collect::<Result<Vec<_>>>()?;
            let pooled = if sims.len() == 1 {
                sims[0]
            } else {
                let all = tape.concat(&sims, 0)?;
                tape.max(all, 0)?
            };
            logits.push(pooled);
        }
        if batch.denominator == DenominatorVariant::WithPositive {
            logits.push(pos);
        }
        let all = tape.concat(&logits, 0)?;
        let scaled = tape.scale(all, inv_tau);
        let ex = tape.exp(scaled);
        let denom = tape.sum_all(ex);
        let log_denom = tape.log(denom)?;
        let pos_scaled = tape.scale(pos, inv_tau);
        per_row.push(tape.sub(log_denom, pos_scaled)?);
    }
    let stacked = tape.concat(&per_row, 0)?;
    let m = tape.mean(stacked, 0)?;
    Ok(m)
}

/// Named terms of the total objective; absent terms count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub kl_old_tokens: Option<Var>,
    pub ce_new_tokens: Option<Var>,
    pub bce_audio: Option<Var>,
    pub bce_visual: Option<Var>,
    pub ctl_audio: Option<Var>,
    pub ctl_visual: Option<Var>,
}

/// Unweighted sum of all present terms.
pub fn total_loss(tape: &mut Tape, terms: LossTerms) -> Result<(Var, LossBreakdown)> {
    let read = |tape: &Tape, v: Option<Var>| -> Result<f64> {
        v.map_or(Ok(0.0), |v| tape.value(v).item())
    };
    let mut breakdown = LossBreakdown {
        kl_old_tokens: read(tape, terms.kl_old_tokens)?,
        ce_new_tokens: read(tape, terms.ce_new_tokens)?,
        bce_audio: read(tape, terms.bce_audio)?,
        bce_visual: read(tape, terms.bce_visual)?,
        ctl_audio: read(tape, terms.ctl_audio)?,
        ctl_visual: read(tape, terms.ctl_visual)?,
        total: 0.0,
    };
    let present: Vec<Var> = [
        terms.kl_old_tokens,
        terms.ce_new_tokens,
        terms.bce_audio,
        terms.bce_visual,
        terms.ctl_audio,
        terms.ctl_visual,
    ]
    .into_iter()
    .flatten()
    .collect();
    let total = match present.split_first() {
        None => tape.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = tape.reshape(first, &[1])?;
            for &v in rest {
                let v = tape.reshape(v, &[1])?;
                acc = tape.add(acc, v)?;
            }
            acc
        }
    };
    breakdown.total = tape.value(total).item()?;
    Ok((total, breakdown))
}
