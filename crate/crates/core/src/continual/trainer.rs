use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::continual::{
    AccuracyMatrix, Adam, AdamConfig, MetricsReport, RehearsalBuffer, Snapshot, TaskSequence,
};
use crate::data::{split_tasks, FeatureDataset, Split};
use crate::error::{CignError, Result};
use crate::losses::{batch_objective, DenominatorVariant, LossBreakdown, ObjectiveConfig, TrainItem};
use crate::model::{AssignmentMode, AttentionVariant, CignModel, ModelConfig, DEFAULT_INIT_STD};
use crate::numerics::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tasks: usize,
    /// Classes per task; `None` splits every class of the dataset.
    pub classes_per_task: Option<usize>,
    pub dim: usize,
    pub patches: usize,
    pub depth: usize,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stored pairs per class.
    pub buffer_capacity: usize,
    pub seed: u64,
    pub assignment: AssignmentMode,
    pub denominator: DenominatorVariant,
    pub attention: AttentionVariant,
    pub init_std: f64,
    pub disable_kl: bool,
    pub disable_ce_new: bool,
    pub disable_ctl: bool,
    pub disable_buffer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tasks: 4,
            classes_per_task: None,
            dim: 32,
            patches: 4,
            depth: 3,
            tau: 0.07,
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-4,
            buffer_capacity: 50,
            seed: 0,
            assignment: AssignmentMode::Soft,
            denominator: DenominatorVariant::AsWritten,
            attention: AttentionVariant::Literal,
            init_std: DEFAULT_INIT_STD,
            disable_kl: false,
            disable_ce_new: false,
            disable_ctl: false,
            disable_buffer: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tasks", self.tasks),
            ("dim", self.dim),
            ("patches", self.patches),
            ("depth", self.depth),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CignError::config(format!("{name} must be positive")));
        }
        if self.classes_per_task == Some(0) {
            return Err(CignError::config("classes_per_task must be positive"));
        }
        if self.buffer_capacity == 0 && !self.disable_buffer {
            return Err(CignError::config("buffer capacity must be positive unless the buffer is disabled"));
        }
        for (name, v) in [("tau", self.tau), ("learning_rate", self.learning_rate), ("init_std", self.init_std)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CignError::config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            patches: self.patches,
            depth: self.depth,
            assignment: self.assignment,
            attention: self.attention,
            init_std: self.init_std,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            tau: self.tau,
            denominator: self.denominator,
            use_kl: !self.disable_kl,
            use_ce_new: !self.disable_ce_new,
            use_ctl: !self.disable_ctl,
        }
    }

    /// The task schedule this configuration induces on `ds`.
    pub fn schedule(&self, ds: &FeatureDataset) -> Result<TaskSequence> {
        let mut classes = ds.class_ids();
        if let Some(n) = self.classes_per_task {
            let needed = n * self.tasks;
            if needed > classes.len() {
                return Err(CignError::config(format!(
                    "{} tasks of {n} classes need {needed} classes, dataset has {}",
                    self.tasks,
                    classes.len()
                )));
            }
            classes.truncate(needed);
        }
        split_tasks(&classes, self.tasks, self.seed)
    }
}

/// One optimizer step in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub task: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub schedule: TaskSequence,
    /// Accuracy matrices in (audio, visual, audio-visual) order.
    pub matrices: [AccuracyMatrix; 3],
    pub report: MetricsReport,
    pub log: Vec<LogEntry>,
    /// Token count after each task.
    pub token_counts: Vec<usize>,
    /// Largest buffer size seen after each task.
    pub buffer_sizes: Vec<usize>,
    pub model: CignModel,
}

impl RunOutput {
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Accuracy of (audio, visual, audio-visual) predictions over `indices`,
/// taking the argmax over every token the model holds.
pub fn evaluate_task(model: &CignModel, ds: &FeatureDataset, indices: &[usize]) -> Result<[f64; 3]> {
    if indices.is_empty() {
        return Err(CignError::config("empty evaluation set"));
    }
    let ids = model.bank.class_ids();
    let mut correct = [0usize; 3];
    for &i in indices {
        let s = &ds.samples[i];
        let slots = model.predict(&s.audio, &s.visual)?.slots();
        for (c, slot) in correct.iter_mut().zip(slots) {
            *c += usize::from(ids[slot] == s.label);
        }
    }
    Ok(correct.map(|c| c as f64 / indices.len() as f64))
}

pub fn run_sequence(ds: &FeatureDataset, cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if ds.dim != cfg.dim || ds.patches != cfg.patches {
        return Err(CignError::config(format!(
            "dataset features are {}x{} but the model expects {}x{}",
            ds.patches, ds.dim, cfg.patches, cfg.dim
        )));
    }
    let schedule = cfg.schedule(ds)?;
    for task in schedule.tasks() {
        for &c in &task.class_ids {
            if ds.indices(Split::Train, Some(&[c])).is_empty() || ds.indices(Split::Test, Some(&[c])).is_empty() {
                return Err(CignError::config(format!("class {c} lacks train or test samples")));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CignModel::new(cfg.model_config(), &mut rng)?;
    let mut buffer: RehearsalBuffer<usize> = RehearsalBuffer::new(cfg.buffer_capacity, cfg.seed.wrapping_add(1));
    let objective = cfg.objective();
    let mut matrices: [AccuracyMatrix; 3] = Default::default();
    let mut log = Vec::new();
    let mut token_counts = Vec::new();
    let mut buffer_sizes = Vec::new();
    let mut step = 0;

    for task in schedule.tasks() {
        let snapshot = (task.task_id > 0).then(|| Snapshot::capture(&model));
        model.begin_task(&task.class_ids, &mut rng)?;
        let mut optimizer = Adam::new(AdamConfig::with_lr(cfg.learning_rate));

        let replay: Vec<usize> = if cfg.disable_buffer {
            Vec::new()
        } else {
            buffer.items().into_iter().map(|(_, &i)| i).collect()
        };
        // Previous-model embeddings never change during a task.
        let mut prev: HashMap<usize, (Tensor, Tensor)> = HashMap::new();
        if let Some(snap) = &snapshot {
            for &i in &replay {
                let s = &ds.samples[i];
                prev.insert(i, snap.embeddings_for(&s.audio, &s.visual, s.label)?);
            }
        }

        let mut current = ds.indices(Split::Train, Some(&task.class_ids));
        let per_batch = if replay.is_empty() {
            cfg.batch_size
        } else {
            (cfg.batch_size / 2).max(1)
        };
        for epoch in 0..cfg.epochs {
            current.shuffle(&mut rng);
            for chunk in current.chunks(per_batch) {
                let mut batch: Vec<usize> = chunk.to_vec();
                batch.extend(replay.choose_multiple(&mut rng, chunk.len().min(replay.len())));
                let items = batch
                    .iter()
                    .map(|&i| {
                        let s = &ds.samples[i];
                        let slot = model.bank.slot_of(s.label).expect("scheduled class has a token");
                        Ok(TrainItem {
                            audio: &s.audio,
                            visual: &s.visual,
                            slot,
                            prev: prev.get(&i).map(|(a, v)| (a, v)),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;

                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, true);
                let (loss, breakdown) =
                    batch_objective(&mut tape, &bound, model.bank.frozen_old(), &items, &objective)?;
                if !breakdown.total.is_finite() {
                    return Err(CignError::NonFiniteLoss {
                        task: task.task_id,
                        step,
                    });
                }
                tape.backward(loss)?;
                let grads: Vec<Tensor> = bound
                    .vars()
                    .iter()
                    .zip(model.named_params())
                    .map(|(&v, (_, t))| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                    .collect();
                optimizer.step(&mut model.named_params_mut(), &grads)?;
                log.push(LogEntry {
                    step,
                    task: task.task_id,
                    epoch,
                    loss: breakdown,
                });
                step += 1;
            }
        }

        if !cfg.disable_buffer {
            let offered = ds.indices(Split::Train, Some(&task.class_ids));
            buffer.update(offered.into_iter().map(|i| (ds.samples[i].label, i)));
        }
        token_counts.push(model.bank.len());
        buffer_sizes.push(buffer.len());

        let mut rows = [Vec::new(), Vec::new(), Vec::new()];
        for seen in &schedule.tasks()[..=task.task_id] {
            let acc = evaluate_task(&model, ds, &ds.indices(Split::Test, Some(&seen.class_ids)))?;
            for (row, a) in rows.iter_mut().zip(acc) {
                row.push(a);
            }
        }
        for (m, row) in matrices.iter_mut().zip(rows) {
            m.push_row(row)?;
        }
    }

    let report = MetricsReport::from_matrices(&matrices)?;
    Ok(RunOutput {
        schedule,
        matrices,
        report,
        log,
        token_counts,
        buffer_sizes,
        model,
    })
}
