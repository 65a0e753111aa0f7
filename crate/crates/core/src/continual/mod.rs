//! The class-incremental protocol: task schedule, rehearsal, training and
//! evaluation.

pub mod adam;
pub mod buffer;
pub mod metrics;
pub mod schedule;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use buffer::RehearsalBuffer;
pub use metrics::{AccuracyMatrix, MetricsReport, ModalityMetrics, TaskMetric};
pub use schedule::{TaskSequence, TaskSpec};
pub use trainer::{evaluate_task, run_sequence, LogEntry, RunOutput, TrainConfig};

use rand::Rng;

use crate::error::{CignError, Result};
use crate::model::{CignModel, ClassTokenBank};
use crate::numerics::Tensor;

/// A frozen copy of the model as it stood when the previous task ended.
#[derive(Debug, Clone)]
pub struct Snapshot {
    model: CignModel,
}

impl Snapshot {
    pub fn capture(model: &CignModel) -> Self {
        Snapshot { model: model.clone() }
    }

    pub fn model(&self) -> &CignModel {
        &self.model
    }

    /// Class-aware embeddings `(audio, visual)` of the sample at the slot of
    /// `class`, each `[1, D]`.
    pub fn embeddings_for(&self, audio: &Tensor, visual: &Tensor, class: usize) -> Result<(Tensor, Tensor)> {
        let slot = self
            .model
            .bank
            .slot_of(class)
            .ok_or_else(|| CignError::config(format!("class {class} unknown to the snapshot")))?;
        let (ga, gv) = self.model.embeddings(audio, visual)?;
        Ok((ga.slice_rows(slot, slot + 1), gv.slice_rows(slot, slot + 1)))
    }
}

/// Appends tokens for `new_class_ids`; see [`ClassTokenBank::expand`].
pub fn expand_tokens<R: Rng + ?Sized>(
    bank: &ClassTokenBank,
    new_class_ids: &[usize],
    init_std: f64,
    rng: &mut R,
) -> Result<ClassTokenBank> {
    let mut next = bank.clone();
    next.expand(new_class_ids, init_std, rng)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expand_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b0 = ClassTokenBank::new(4);
        let b1 = expand_tokens(&b0, &[0, 1, 2], 0.02, &mut rng).unwrap();
        assert_eq!((b1.len(), b1.old_count()), (3, 0));
        let b2 = expand_tokens(&b1, &[3, 4, 5], 0.02, &mut rng).unwrap();
        assert_eq!((b2.len(), b2.old_count()), (6, 3));
        assert_eq!(b2.tokens().unwrap().slice_rows(0, 3), *b1.tokens().unwrap());
        assert!(expand_tokens(&b2, &[5], 0.02, &mut rng).is_err());
    }

    #[test]
    fn snapshot_is_bit_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = CignModel::new(ModelConfig { dim: 6, ..ModelConfig::default() }, &mut rng).unwrap();
        model.begin_task(&[4, 7], &mut rng).unwrap();
        let snap = Snapshot::capture(&model);
        let a = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let v = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let first = snap.embeddings_for(&a, &v, 7).unwrap();
        model.begin_task(&[1], &mut rng).unwrap();
        model.bank.tokens_mut().unwrap().data_mut()[0] += 1.0;
        let again = snap.embeddings_for(&a, &v, 7).unwrap();
        assert_eq!(first, again);
        assert!(snap.embeddings_for(&a, &v, 1).is_err());
    }
}
