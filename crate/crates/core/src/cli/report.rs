use std::path::Path;

use crate::continual::{AccuracyMatrix, MetricsReport, ModalityMetrics};
use crate::error::{CignError, Result};
use crate::fsio::write_atomic;

pub const METRICS_FILE: &str = "metrics.json";
pub const MATRIX_FILE: &str = "accuracy_matrix.csv";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const MODALITIES: [&str; 3] = ["audio", "visual", "audio_visual"];
const LABELS: [&str; 3] = ["Audio", "Visual", "Audio-Visual"];

/// All three matrices stacked, with a leading modality column.
pub fn matrices_csv(m: &[AccuracyMatrix; 3]) -> String {
    let mut out = String::new();
    for (k, (name, matrix)) in MODALITIES.iter().zip(m).enumerate() {
        for (i, line) in matrix.to_csv().lines().enumerate() {
            if i == 0 {
                if k == 0 {
                    out.push_str(&format!("modality,{line}\n"));
                }
                continue;
            }
            out.push_str(&format!("{name},{line}\n"));
        }
    }
    out
}

fn modalities(r: &MetricsReport) -> [&ModalityMetrics; 3] {
    [&r.audio, &r.visual, &r.audio_visual]
}

pub fn render_table(r: &MetricsReport) -> String {
    let mut out = format!("{:<14}{:>10}{:>12}\n", "Modality", "AvgAcc", "Forgetting");
    for (label, m) in LABELS.iter().zip(modalities(r)) {
        let f = m.forgetting.map_or_else(|| "-".to_string(), |f| format!("{f:.4}"));
        out.push_str(&format!("{label:<14}{:>10.4}{f:>12}\n", m.avg_acc));
    }
    out
}

/// Per-task metrics in long form for plotting.
pub fn summary_csv(r: &MetricsReport) -> String {
    let mut out = String::from("modality,task,AvgAcc,Forgetting\n");
    for (name, m) in MODALITIES.iter().zip(modalities(r)) {
        for t in &m.per_task {
            let f = t.forgetting.map_or_else(String::new, |f| f.to_string());
            out.push_str(&format!("{name},{},{},{f}\n", t.task, t.avg_acc));
        }
    }
    out
}

pub fn read_report(run_dir: &Path) -> Result<MetricsReport> {
    let missing: Vec<String> = [METRICS_FILE, MATRIX_FILE]
        .iter()
        .filter(|f| !run_dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CignError::MissingArtifacts {
            dir: run_dir.to_path_buf(),
            missing,
        });
    }
    let path = run_dir.join(METRICS_FILE);
    let text = std::fs::read(&path).map_err(|e| CignError::io(&path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Reads a run directory, writes the summary CSV next to it and returns the
/// printable table.
pub fn report(run_dir: &Path) -> Result<String> {
    let r = read_report(run_dir)?;
    write_atomic(&run_dir.join(SUMMARY_FILE), summary_csv(&r).as_bytes())?;
    Ok(render_table(&r))
}
