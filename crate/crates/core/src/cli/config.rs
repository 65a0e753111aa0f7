use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continual::TrainConfig;
use crate::data::SyntheticSpec;
use crate::error::{CignError, Result};
use crate::losses::DenominatorVariant;
use crate::model::{AssignmentMode, AttentionVariant, DEFAULT_INIT_STD};

/// Everything one experiment needs, as a flat JSON object. Missing keys take
/// the desk-scale benchmark defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: usize,
    pub classes_per_task: Option<usize>,
    pub dim: usize,
    pub patches: usize,
    pub depth: usize,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub assignment: AssignmentMode,
    pub contrastive_denominator: DenominatorVariant,
    pub attention: AttentionVariant,
    pub init_std: f64,
    pub disable_kl: bool,
    pub disable_ce_new: bool,
    pub disable_ctl: bool,
    pub disable_buffer: bool,

    /// Precomputed feature directory; synthetic data is generated when unset.
    pub dataset: Option<PathBuf>,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub sigma: f64,
    pub rho: f64,
    /// Seed of the synthetic generator; defaults to `seed` when unset.
    pub data_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tasks: 4,
            classes_per_task: None,
            dim: 32,
            patches: 4,
            depth: 3,
            tau: BENCH_TAU,
            epochs: 30,
            batch_size: 16,
            learning_rate: BENCH_LR,
            buffer_capacity: BENCH_BUFFER,
            seed: 0,
            assignment: AssignmentMode::Soft,
            contrastive_denominator: DenominatorVariant::AsWritten,
            attention: AttentionVariant::Projected,
            init_std: DEFAULT_INIT_STD,
            disable_kl: false,
            disable_ce_new: false,
            disable_ctl: false,
            disable_buffer: false,
            dataset: None,
            num_classes: 8,
            train_per_class: 100,
            val_per_class: 0,
            test_per_class: 20,
            separation: 6.0,
            sigma: 1.0,
            rho: 0.8,
            data_seed: None,
        }
    }
}

const BENCH_LR: f64 = 3e-3;
const BENCH_TAU: f64 = 0.5;
const BENCH_BUFFER: usize = 10;

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| CignError::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            tasks: self.tasks,
            classes_per_task: self.classes_per_task,
            dim: self.dim,
            patches: self.patches,
            depth: self.depth,
            tau: self.tau,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            buffer_capacity: self.buffer_capacity,
            seed: self.seed,
            assignment: self.assignment,
            denominator: self.contrastive_denominator,
            attention: self.attention,
            init_std: self.init_std,
            disable_kl: self.disable_kl,
            disable_ce_new: self.disable_ce_new,
            disable_ctl: self.disable_ctl,
            disable_buffer: self.disable_buffer,
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            dim: self.dim,
            patches: self.patches,
            train_per_class: self.train_per_class,
            val_per_class: self.val_per_class,
            test_per_class: self.test_per_class,
            separation: self.separation,
            sigma: self.sigma,
            rho: self.rho,
            seed: self.data_seed.unwrap_or(self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if self.dataset.is_none() {
            self.synthetic().validate()?;
        }
        Ok(())
    }
}
