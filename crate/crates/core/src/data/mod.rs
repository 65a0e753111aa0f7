//! Audio-visual feature datasets: synthetic generation, file I/O and
//! class-to-task splitting.

pub mod io;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_features, save_features, FEATURES_VERSION};
pub use synthetic::{generate_synthetic, nearest_centroid_accuracy, SyntheticSpec};

use crate::continual::TaskSequence;
use crate::error::{CignError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub id: usize,
    /// `[1, D]`
    pub audio: Tensor,
    /// `[P, D]`
    pub visual: Tensor,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub name: String,
    pub num_classes: usize,
    pub dim: usize,
    pub patches: usize,
    pub samples: Vec<FeatureSample>,
}

impl FeatureDataset {
    /// Checks shapes, labels, finiteness and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for s in &self.samples {
            if s.audio.shape() != [1, self.dim] || s.visual.shape() != [self.patches, self.dim] {
                return Err(CignError::Shape {
                    op: "feature sample",
                    lhs: [s.audio.shape(), s.visual.shape()].concat(),
                    rhs: vec![1, self.dim, self.patches, self.dim],
                });
            }
            if s.label >= self.num_classes {
                return Err(CignError::config(format!(
                    "sample {} has label {} outside {} classes",
                    s.id, s.label, self.num_classes
                )));
            }
            if !s.audio.all_finite() || !s.visual.all_finite() {
                return Err(CignError::config(format!("sample {} has non-finite features", s.id)));
            }
            if !ids.insert(s.id) {
                return Err(CignError::config(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn class_ids(&self) -> Vec<usize> {
        (0..self.num_classes).collect()
    }

    /// Indices into `samples` for one split, optionally restricted to classes.
    pub fn indices(&self, split: Split, classes: Option<&[usize]>) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split && classes.is_none_or(|c| c.contains(&s.label)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }
}

/// Seeded shuffle of `class_ids` followed by a contiguous partition into
/// `tasks` parts. When the count does not divide evenly the earliest tasks
/// receive one extra class each.
pub fn split_tasks(class_ids: &[usize], tasks: usize, seed: u64) -> Result<TaskSequence> {
    if tasks == 0 || tasks > class_ids.len() {
        return Err(CignError::config(format!(
            "cannot split {} classes into {tasks} tasks",
            class_ids.len()
        )));
    }
    let mut order = class_ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = order.len() / tasks;
    let extra = order.len() % tasks;
    let mut sets = Vec::with_capacity(tasks);
    let mut start = 0;
    for t in 0..tasks {
        let n = base + usize::from(t < extra);
        sets.push(order[start..start + n].to_vec());
        start += n;
    }
    TaskSequence::new(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let eight: Vec<usize> = (0..8).collect();
        let s = split_tasks(&eight, 4, 1).unwrap();
        assert!(s.tasks().iter().all(|t| t.class_ids.len() == 2));
        let one = split_tasks(&eight, 1, 1).unwrap();
        let mut all = one.tasks()[0].class_ids.clone();
        all.sort();
        assert_eq!(all, eight);
        let hundred: Vec<usize> = (0..100).collect();
        let s = split_tasks(&hundred, 4, 7).unwrap();
        assert!(s.tasks().iter().all(|t| t.class_ids.len() == 25));
        assert!(split_tasks(&eight, 9, 1).is_err());
        assert!(split_tasks(&eight, 0, 1).is_err());
    }

    #[test]
    fn remainder_goes_to_earliest_tasks() {
        let ten: Vec<usize> = (0..10).collect();
        let s = split_tasks(&ten, 4, 3).unwrap();
        let sizes: Vec<usize> = s.tasks().iter().map(|t| t.class_ids.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }

    #[test]
    fn split_is_seeded() {
        let c: Vec<usize> = (0..12).collect();
        assert_eq!(split_tasks(&c, 3, 5).unwrap(), split_tasks(&c, 3, 5).unwrap());
        assert_ne!(split_tasks(&c, 3, 5).unwrap(), split_tasks(&c, 3, 6).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn split_is_disjoint_and_exhaustive(n in 1usize..40, t in 1usize..10, seed in 0u64..1000) {
            proptest::prop_assume!(t <= n);
            let c: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let s = split_tasks(&c, t, seed).unwrap();
            let mut all = s.all_classes();
            all.sort();
            proptest::prop_assert_eq!(all, c);
            let sizes: Vec<usize> = s.tasks().iter().map(|t| t.class_ids.len()).collect();
            proptest::prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
            proptest::prop_assert!(sizes[0] - sizes[t - 1] <= 1);
        }
    }
}
