//! The per-batch training objective.

use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};
use crate::losses::{
    bce_class, ce_new_tokens, continual_contrastive, kl_token_distill, slot_targets,
    total_loss, ContrastiveBatch, DenominatorVariant, LossBreakdown, LossTerms, DEFAULT_TAU,
};
use crate::model::BoundModel;
use crate::numerics::{Tape, Tensor, Var};

/// Which terms enter the objective and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub tau: f64,
    pub denominator: DenominatorVariant,
    pub use_kl: bool,
    pub use_ce_new: bool,
    pub use_ctl: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            tau: DEFAULT_TAU,
            denominator: DenominatorVariant::AsWritten,
            use_kl: true,
            use_ce_new: true,
            use_ctl: true,
        }
    }
}

/// One training sample.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub audio: &'a Tensor,
    pub visual: &'a Tensor,
    /// Token slot of the sample's class.
    pub slot: usize,
    /// Previous-model embeddings `(audio, visual)` at `slot`, each `[1, D]`.
    /// Present exactly for replayed old-class samples.
    pub prev: Option<(&'a Tensor, &'a Tensor)>,
}

/// Builds the total loss for one batch.
///
/// Binary cross-entropy is averaged over the batch. The token terms are
/// added once per batch. The contrastive term uses old-class items as
/// anchors and the batch's new-class items as negatives; it is skipped when
/// either side is empty.
pub fn batch_objective(
    tape: &mut Tape,
    model: &BoundModel,
    frozen_old: Option<&Tensor>,
    items: &[TrainItem<'_>],
    cfg: &ObjectiveConfig,
) -> Result<(Var, LossBreakdown)> {
    if items.is_empty() {
        return Err(CignError::config("empty batch"));
    }
    let tokens = model
        .tokens
        .ok_or_else(|| CignError::config("objective needs at least one class token"))?;
    let k = tape.shape(tokens)[0];
    let old = model.old_count;
    let mut terms = LossTerms::default();

    if cfg.use_kl {
        let d = kl_token_distill(tape, tokens, frozen_old)?;
        if d.active {
            terms.kl_old_tokens = Some(d.loss);
        }
    }
    if cfg.use_ce_new {
        if let Some(e) = model.token_class_probs(tape)? {
            let (rows, cols) = (tape.shape(e)[0], tape.shape(e)[1]);
            terms.ce_new_tokens = Some(ce_new_tokens(tape, e, &slot_targets(rows, cols))?);
        }
    }

    let inv_batch = 1.0 / items.len() as f64;
    let mut bce = [Vec::new(), Vec::new()];
    let mut prev = [Vec::new(), Vec::new()];
    let mut curr_old = [Vec::new(), Vec::new()];
    let mut curr_new = [Vec::new(), Vec::new()];
    let mut new_classes = Vec::new();
    for item in items {
        if item.slot >= k {
            return Err(CignError::config(format!("slot {} outside {k} tokens", item.slot)));
        }
        let out = model.forward_sample(tape, item.audio, item.visual)?;
        let mut y = Tensor::zeros(&[k, 1]);
        y.data_mut()[item.slot] = 1.0;
        bce[0].push(bce_class(tape, out.p_audio, &y)?);
        bce[1].push(bce_class(tape, out.p_visual, &y)?);
        if !cfg.use_ctl {
            continue;
        }
        let rows = [
            tape.row(out.audio.embeddings, item.slot)?,
            tape.row(out.visual.embeddings, item.slot)?,
        ];
        match item.prev {
            Some((pa, pv)) if item.slot < old => {
                prev[0].push(tape.constant(pa.clone()));
                prev[1].push(tape.constant(pv.clone()));
                curr_old[0].push(rows[0]);
                curr_old[1].push(rows[1]);
            }
            _ if item.slot >= old => {
                curr_new[0].push(rows[0]);
                curr_new[1].push(rows[1]);
                new_classes.push(item.slot);
            }
            _ => {}
        }
    }
    let mean = |tape: &mut Tape, parts: &[Var]| -> Result<Var> {
        let all = tape.concat(parts, 0)?;
        let s = tape.sum_all(all);
        Ok(tape.scale(s, inv_batch))
    };
    terms.bce_audio = Some(mean(tape, &bce[0])?);
    terms.bce_visual = Some(mean(tape, &bce[1])?);

    if cfg.use_ctl && !curr_old[0].is_empty() && !curr_new[0].is_empty() {
        let mut ctl = [None, None];
        for m in 0..2 {
            ctl[m] = Some(continual_contrastive(
                tape,
                ContrastiveBatch {
                    prev: &prev[m],
                    curr_old: &curr_old[m],
                    curr_new: &curr_new[m],
                    new_classes: &new_classes,
                    tau: cfg.tau,
                    denominator: cfg.denominator,
                },
            )?);
        }
        terms.ctl_audio = ctl[0];
        terms.ctl_visual = ctl[1];
    }
    total_loss(tape, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CignModel, ModelConfig};
    use crate::numerics::gradcheck::grad_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Toy {
        model: CignModel,
        snapshot: CignModel,
        samples: Vec<(Tensor, Tensor, usize)>,
    }

    fn toy() -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cfg = ModelConfig {
            dim: 8,
            patches: 4,
            depth: 2,
            init_std: 0.4,
            ..ModelConfig::default()
        };
        let mut model = CignModel::new(cfg, &mut rng).unwrap();
        model.begin_task(&[0, 1], &mut rng).unwrap();
        let snapshot = model.clone();
        model.begin_task(&[2, 3], &mut rng).unwrap();
        let samples = [1usize, 3]
            .iter()
            .map(|&slot| {
                (
                    Tensor::randn(&[1, 8], 1.0, &mut rng),
                    Tensor::randn(&[4, 8], 1.0, &mut rng),
                    slot,
                )
            })
            .collect();
        Toy {
            model,
            snapshot,
            samples,
        }
    }

    fn prev_rows(toy: &Toy) -> Vec<Option<(Tensor, Tensor)>> {
        toy.samples
            .iter()
            .map(|(a, v, slot)| {
                (*slot < toy.snapshot.bank.len()).then(|| {
                    let (ga, gv) = toy.snapshot.embeddings(a, v).unwrap();
                    (ga.slice_rows(*slot, slot + 1), gv.slice_rows(*slot, slot + 1))
                })
            })
            .collect()
    }

    #[test]
    fn full_objective_gradients_match_finite_differences() {
        let toy = toy();
        let prev = prev_rows(&toy);
        let frozen = toy.model.bank.frozen_old().cloned();
        let inputs: Vec<Tensor> = toy.model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
        let cfg = ObjectiveConfig {
            tau: 0.5,
            ..ObjectiveConfig::default()
        };
        let err = grad_check_many(
            |tape: &mut Tape, vars: &[Var]| {
                let bound = toy.model.bind_vars(vars)?;
                let items: Vec<TrainItem> = toy
                    .samples
                    .iter()
                    .zip(&prev)
                    .map(|((a, v, slot), p)| TrainItem {
                        audio: a,
                        visual: v,
                        slot: *slot,
                        prev: p.as_ref().map(|(x, y)| (x, y)),
                    })
                    .collect();
                let (loss, b) = batch_objective(tape, &bound, frozen.as_ref(), &items, &cfg)?;
                assert!(b.ctl_audio != 0.0 && b.kl_old_tokens >= 0.0);
                Ok(loss)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn breakdown_adds_up_and_switches_remove_terms() {
        let toy = toy();
        let prev = prev_rows(&toy);
        let items: Vec<TrainItem> = toy
            .samples
            .iter()
            .zip(&prev)
            .map(|((a, v, slot), p)| TrainItem {
                audio: a,
                visual: v,
                slot: *slot,
                prev: p.as_ref().map(|(x, y)| (x, y)),
            })
            .collect();
        let frozen = toy.model.bank.frozen_old();
        let mut tape = Tape::new();
        let bound = toy.model.bind(&mut tape, true);
        let (_, b) = batch_objective(&mut tape, &bound, frozen, &items, &ObjectiveConfig::default()).unwrap();
        assert!((b.parts_sum() - b.total).abs() <= 1e-10);
        assert!(b.ce_new_tokens > 0.0 && b.bce_audio > 0.0);

        let off = ObjectiveConfig {
            use_kl: false,
            use_ce_new: false,
            use_ctl: false,
            ..ObjectiveConfig::default()
        };
        let mut tape = Tape::new();
        let bound = toy.model.bind(&mut tape, true);
        let (_, b) = batch_objective(&mut tape, &bound, frozen, &items, &off).unwrap();
        assert_eq!((b.kl_old_tokens, b.ce_new_tokens, b.ctl_audio, b.ctl_visual), (0.0, 0.0, 0.0, 0.0));
        assert!((b.total - b.bce_audio - b.bce_visual).abs() <= 1e-12);
    }

    #[test]
    fn first_task_has_no_distillation_or_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = CignModel::new(ModelConfig { dim: 8, ..ModelConfig::default() }, &mut rng).unwrap();
        model.begin_task(&[0, 1, 2], &mut rng).unwrap();
        let a = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let v = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let items = [TrainItem {
            audio: &a,
            visual: &v,
            slot: 2,
            prev: None,
        }];
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let (_, b) = batch_objective(&mut tape, &bound, None, &items, &ObjectiveConfig::default()).unwrap();
        assert_eq!(b.kl_old_tokens, 0.0);
        assert_eq!(b.ctl_audio, 0.0);
    }
}
