use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
}

/// Ordered tasks with pairwise disjoint, non-empty class sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    tasks: Vec<TaskSpec>,
}

impl TaskSequence {
    pub fn new(class_sets: Vec<Vec<usize>>) -> Result<Self> {
        if class_sets.is_empty() {
            return Err(CignError::config("a task sequence needs at least one task"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (t, set) in class_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(CignError::config(format!("task {t} has no classes")));
            }
            for &c in set {
                if !seen.insert(c) {
                    return Err(CignError::config(format!("class {c} appears in more than one task")));
                }
            }
        }
        Ok(TaskSequence {
            tasks: class_sets
                .into_iter()
                .enumerate()
                .map(|(task_id, class_ids)| TaskSpec { task_id, class_ids })
                .collect(),
        })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All classes in schedule order.
    pub fn all_classes(&self) -> Vec<usize> {
        self.tasks.iter().flat_map(|t| t.class_ids.iter().copied()).collect()
    }

    /// Classes of tasks `0..=t`.
    pub fn classes_through(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t]
            .iter()
            .flat_map(|t| t.class_ids.iter().copied())
            .collect()
    }

    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.class_ids.contains(&class))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_overlap_and_empty_tasks() {
        assert!(TaskSequence::new(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(TaskSequence::new(vec![vec![0], vec![]]).is_err());
        assert!(TaskSequence::new(vec![]).is_err());
        let s = TaskSequence::new(vec![vec![3, 1], vec![0, 2]]).unwrap();
        assert_eq!(s.all_classes(), vec![3, 1, 0, 2]);
        assert_eq!(s.task_of(2), Some(1));
        assert_eq!(s.classes_through(0), vec![3, 1]);
    }
}
