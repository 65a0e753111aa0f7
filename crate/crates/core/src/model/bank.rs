use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};
use crate::numerics::Tensor;

/// Learnable class tokens, one row per class seen so far.
///
/// Rows `[0, old_count)` belong to classes of earlier tasks; `frozen_old`
/// holds their values as they were when the current task began.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTokenBank {
    dim: usize,
    tokens: Option<Tensor>,
    class_ids: Vec<usize>,
    old_count: usize,
    frozen_old: Option<Tensor>,
}

impl ClassTokenBank {
    pub fn new(dim: usize) -> Self {
        ClassTokenBank {
            dim,
            tokens: None,
            class_ids: Vec::new(),
            old_count: 0,
            frozen_old: None,
        }
    }

    /// Builds a bank from explicit parts; used by tests and checkpoint loading.
    pub fn from_parts(
        tokens: Option<Tensor>,
        class_ids: Vec<usize>,
        old_count: usize,
        frozen_old: Option<Tensor>,
        dim: usize,
    ) -> Result<Self> {
        let k = tokens.as_ref().map_or(0, |t| t.dims2().0);
        if k != class_ids.len() || old_count > k {
            return Err(CignError::config(format!(
                "token bank with {k} rows, {} class ids, old_count {old_count}",
                class_ids.len()
            )));
        }
        if let Some(t) = &tokens {
            if t.shape() != [k, dim] {
                return Err(CignError::Shape {
                    op: "token bank",
                    lhs: t.shape().to_vec(),
                    rhs: vec![k, dim],
                });
            }
        }
        if let Some(f) = &frozen_old {
            if f.shape() != [old_count, dim] {
                return Err(CignError::Shape {
                    op: "token bank snapshot",
                    lhs: f.shape().to_vec(),
                    rhs: vec![old_count, dim],
                });
            }
        }
        Ok(ClassTokenBank {
            dim,
            tokens,
            class_ids,
            old_count,
            frozen_old,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of tokens, K.
    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn old_count(&self) -> usize {
        self.old_count
    }

    pub fn new_count(&self) -> usize {
        self.len() - self.old_count
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn slot_of(&self, class_id: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class_id)
    }

    pub fn tokens(&self) -> Option<&Tensor> {
        self.tokens.as_ref()
    }

    pub fn tokens_mut(&mut self) -> Option<&mut Tensor> {
        self.tokens.as_mut()
    }

    pub fn frozen_old(&self) -> Option<&Tensor> {
        self.frozen_old.as_ref()
    }

    /// Records the current tokens as the reference for distillation and
    /// appends freshly initialized rows for `new_class_ids`.
    pub fn expand<R: Rng + ?Sized>(
        &mut self,
        new_class_ids: &[usize],
        init_std: f64,
        rng: &mut R,
    ) -> Result<()> {
        for (i, id) in new_class_ids.iter().enumerate() {
            if self.class_ids.contains(id) || new_class_ids[..i].contains(id) {
                return Err(CignError::config(format!("duplicate class id {id}")));
            }
        }
        if new_class_ids.is_empty() {
            return Err(CignError::config("expansion with no new classes"));
        }
        let fresh = Tensor::randn(&[new_class_ids.len(), self.dim], init_std, rng);
        self.frozen_old = self.tokens.clone();
        self.old_count = self.len();
        self.tokens = Some(match &self.tokens {
            Some(t) => t.vstack(&fresh)?,
            None => fresh,
        });
        self.class_ids.extend_from_slice(new_class_ids);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expansion_tracks_counts_and_carries_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = ClassTokenBank::new(4);
        bank.expand(&[0, 1, 2], 0.02, &mut rng).unwrap();
        assert_eq!((bank.len(), bank.old_count()), (3, 0));
        assert!(bank.frozen_old().is_none());
        let before = bank.tokens().unwrap().clone();

        bank.expand(&[3, 4, 5], 0.02, &mut rng).unwrap();
        assert_eq!((bank.len(), bank.old_count()), (6, 3));
        let after = bank.tokens().unwrap();
        assert_eq!(&after.data()[..12], before.data());
        assert_eq!(bank.frozen_old().unwrap(), &before);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = ClassTokenBank::new(2);
        bank.expand(&[0, 1], 0.02, &mut rng).unwrap();
        assert!(bank.expand(&[1, 2], 0.02, &mut rng).is_err());
        assert!(bank.expand(&[5, 5], 0.02, &mut rng).is_err());
        assert_eq!(bank.len(), 2);
    }

    #[test]
    fn four_tasks_of_twenty_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = ClassTokenBank::new(8);
        for t in 0..4 {
            let ids: Vec<usize> = (t * 25..(t + 1) * 25).collect();
            bank.expand(&ids, 0.02, &mut rng).unwrap();
        }
        assert_eq!(bank.len(), 100);
        assert_eq!(bank.old_count(), 75);
    }
}
