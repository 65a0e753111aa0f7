//! The gradient-check suite: every registered tape op plus the complete
//! training objective on a toy model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::continual::Snapshot;
use crate::error::Result;
use crate::losses::{batch_objective, DenominatorVariant, ObjectiveConfig, TrainItem};
use crate::model::{AttentionVariant, CignModel, ModelConfig};
use crate::numerics::gradcheck::{grad_check_many_on, op_registry, DEFAULT_STEP};
use crate::numerics::{Tape, Tensor, Var};

pub const TOLERANCE: f64 = 1e-4;
const OP_TRIALS: usize = 10;

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<CheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn render(&self) -> String {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:width$}  {:.3e}  {}\n",
                e.name,
                e.max_rel_error,
                if e.passed { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Toy model with two tasks of two classes (K = 4, D = 8, P = 4) and a batch
/// of two replayed old-class samples and two new-class samples.
pub fn full_chain_error(seed: u64, attention: AttentionVariant, corrupt: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        dim: 8,
        patches: 4,
        depth: 2,
        attention,
        init_std: 0.4,
        ..ModelConfig::default()
    };
    let mut model = CignModel::new(cfg, &mut rng)?;
    model.begin_task(&[0, 1], &mut rng)?;
    let snapshot = Snapshot::capture(&model);
    model.begin_task(&[2, 3], &mut rng)?;

    let mut samples = Vec::new();
    for class in 0..4 {
        let a = Tensor::randn(&[1, 8], 1.0, &mut rng);
        let v = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let prev = if class < 2 {
            Some(snapshot.embeddings_for(&a, &v, class)?)
        } else {
            None
        };
        samples.push((a, v, class, prev));
    }
    let frozen = model.bank.frozen_old().cloned();
    let objective = ObjectiveConfig {
        tau: 0.5,
        denominator: DenominatorVariant::AsWritten,
        ..ObjectiveConfig::default()
    };
    let inputs: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let f = |tape: &mut Tape, vars: &[Var]| {
        let bound = model.bind_vars(vars)?;
        let items: Vec<TrainItem> = samples
            .iter()
            .map(|(a, v, class, prev)| TrainItem {
                audio: a,
                visual: v,
                slot: model.bank.slot_of(*class).expect("toy class"),
                prev: prev.as_ref().map(|(x, y)| (x, y)),
            })
            .collect();
        Ok(batch_objective(tape, &bound, frozen.as_ref(), &items, &objective)?.0)
    };
    let tape = if corrupt {
        Tape::with_corrupted_backward()
    } else {
        Tape::new()
    };
    grad_check_many_on(tape, f, &inputs, DEFAULT_STEP)
}

/// Runs every check. `inject_fault` swaps in a deliberately wrong sigmoid
/// backward rule.
pub fn run_suite(seed: u64, inject_fault: bool) -> Result<GradcheckReport> {
    let mut entries = Vec::new();
    let mut push = |name: String, err: f64| {
        entries.push(CheckEntry {
            name,
            max_rel_error: err,
            passed: err <= TOLERANCE,
        })
    };
    for case in op_registry() {
        push(case.name.to_string(), case.check(seed, OP_TRIALS, inject_fault)?);
    }
    for (name, variant) in [
        ("objective (literal attention)", AttentionVariant::Literal),
        ("objective (projected attention)", AttentionVariant::Projected),
    ] {
        push(name.to_string(), full_chain_error(seed, variant, inject_fault)?);
    }
    Ok(GradcheckReport { entries })
}
