use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};

/// `a[t][i]`: accuracy on task `i`'s test set after training task `t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends row `t`, which must hold `t + 1` accuracies in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len();
        if row.len() != t + 1 {
            return Err(CignError::config(format!(
                "row {t} of the accuracy matrix needs {} entries, got {}",
                t + 1,
                row.len()
            )));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(CignError::config(format!("accuracy {bad} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    fn row(&self, t: usize) -> Result<&[f64]> {
        self.rows.get(t).map(Vec::as_slice).ok_or_else(|| {
            CignError::config(format!("accuracy row {t} not recorded ({} rows)", self.rows.len()))
        })
    }

    /// Mean of row `t`.
    pub fn average_accuracy(&self, t: usize) -> Result<f64> {
        let row = self.row(t)?;
        Ok(row.iter().sum::<f64>() / row.len() as f64)
    }

    /// Mean over tasks `i < t` of the drop from the best accuracy task `i`
    /// ever reached (through task `t`) to its accuracy after task `t`.
    /// Each term is non-negative.
    pub fn forgetting(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(CignError::config("forgetting needs at least two tasks"));
        }
        let last = self.row(t)?;
        let mut total = 0.0;
        for (i, &now) in last.iter().enumerate().take(t) {
            let best = (i..=t).map(|k| self.rows[k][i]).fold(f64::NEG_INFINITY, f64::max);
            total += best - now;
        }
        Ok(total / t as f64)
    }

    /// One line per finished task; cells of tasks not yet seen are empty.
    pub fn to_csv(&self) -> String {
        let n = self.rows.len();
        let mut out = String::from("after_task");
        for i in 0..n {
            out.push_str(&format!(",task_{i}"));
        }
        out.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            out.push_str(&t.to_string());
            for i in 0..n {
                out.push(',');
                if let Some(a) = row.get(i) {
                    out.push_str(&a.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task: usize,
    #[serde(rename = "AvgAcc")]
    pub avg_acc: f64,
    #[serde(rename = "Forgetting", default, skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<f64>,
}

/// Final and per-task metrics of one prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    #[serde(rename = "AvgAcc")]
    pub avg_acc: f64,
    #[serde(rename = "Forgetting", default, skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<f64>,
    pub per_task: Vec<TaskMetric>,
}

impl ModalityMetrics {
    pub fn from_matrix(m: &AccuracyMatrix) -> Result<Self> {
        if m.tasks() == 0 {
            return Err(CignError::config("no tasks evaluated"));
        }
        let per_task = (0..m.tasks())
            .map(|t| {
                Ok(TaskMetric {
                    task: t,
                    avg_acc: m.average_accuracy(t)?,
                    forgetting: if t == 0 { None } else { Some(m.forgetting(t)?) },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let last = per_task.last().expect("at least one task").clone();
        Ok(ModalityMetrics {
            avg_acc: last.avg_acc,
            forgetting: last.forgetting,
            per_task,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub audio: ModalityMetrics,
    pub visual: ModalityMetrics,
    pub audio_visual: ModalityMetrics,
}

impl MetricsReport {
    /// From matrices in (audio, visual, audio-visual) order.
    pub fn from_matrices(m: &[AccuracyMatrix; 3]) -> Result<Self> {
        Ok(MetricsReport {
            audio: ModalityMetrics::from_matrix(&m[0])?,
            visual: ModalityMetrics::from_matrix(&m[1])?,
            audio_visual: ModalityMetrics::from_matrix(&m[2])?,
        })
    }
}
