use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--classes", "4", "--dim", "8", "--patches", "2", "--depth", "1", "--epochs", "2", "--buffer", "4",
];

fn cign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cign"))
        .args(args)
        .env_remove("CIGN_SEED")
        .output()
        .expect("spawn cign")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    cign(&args)
}

#[test]
fn synth_writes_features_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = cign(&["synth", "--out", a.to_str().unwrap(), "--seed", "3"]);
    let ob = cign(&["synth", "--out", b.to_str().unwrap(), "--seed", "3"]);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(a.join("manifest.json").is_file() && a.join("features.bin").is_file());
    assert_eq!(stdout(&oa), stdout(&ob));
    assert_eq!(std::fs::read(a.join("features.bin")).unwrap(), std::fs::read(b.join("features.bin")).unwrap());

    let ds = cign_core::data::load_features(&a).unwrap();
    let oracle = cign_core::data::nearest_centroid_accuracy(&ds, cign_core::data::Split::Test).unwrap();
    assert!(stdout(&oa).contains(&format!("nearest-centroid test accuracy {oracle:.4}")));
    assert!(stdout(&oa).contains("train 800  val 0  test 160"));
}

#[test]
fn run_is_reproducible_and_loads_saved_features() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run_into(&a, &["--seed", "5", "--tasks", "2"]).status.success());
    assert!(run_into(&b, &["--seed", "5", "--tasks", "2"]).status.success());
    let csv = std::fs::read(a.join("accuracy_matrix.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("accuracy_matrix.csv")).unwrap());
    for f in ["config.json", "metrics.json", "train_log.jsonl"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let first = std::fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["step", "task", "epoch", "kl_old_tokens", "ce_new_tokens", "ctl_audio", "total"] {
        assert!(entry.get(key).is_some(), "{key}");
    }

    let feats = tmp.path().join("feats");
    let mut synth = vec!["synth", "--out", feats.to_str().unwrap(), "--seed", "5"];
    synth.extend_from_slice(&TINY[..6]);
    assert!(cign(&synth).status.success());
    assert!(run_into(&c, &["--seed", "5", "--tasks", "2", "--dataset", feats.to_str().unwrap()]).status.success());
    assert_eq!(csv, std::fs::read(c.join("accuracy_matrix.csv")).unwrap());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_into(&a, &["--seed", "7", "--tasks", "2"]).status.success());
    let mut args = vec!["run", "--out", b.to_str().unwrap(), "--tasks", "2"];
    args.extend_from_slice(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_cign")).args(&args).env("CIGN_SEED", "7").output().unwrap();
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(a.join("accuracy_matrix.csv")).unwrap(),
        std::fs::read(b.join("accuracy_matrix.csv")).unwrap()
    );
}

#[test]
fn single_task_omits_forgetting() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_into(tmp.path(), &["--tasks", "1"]);
    assert!(o.status.success());
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["audio_visual"].get("AvgAcc").is_some());
    assert!(metrics["audio_visual"].get("Forgetting").is_none());
    assert!(stdout(&o).lines().any(|l| l.starts_with("Audio-Visual") && l.trim_end().ends_with('-')));
}

#[test]
fn invalid_configuration_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"tasks": 0}"#).unwrap();
    let o = run_into(&tmp.path().join("r"), &["--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));

    std::fs::write(&cfg, r#"{"epochs": 1, "buffer": 3}"#).unwrap();
    let o = run_into(&tmp.path().join("r"), &["--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());

    let o = run_into(&tmp.path().join("r"), &["--tasks", "9"]);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let ok = cign(&["gradcheck", "--seed", "2"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("objective (projected attention)"));
    assert!(!stdout(&ok).contains("FAIL"));
    let bad = cign(&["gradcheck", "--seed", "2", "--inject-fault"]);
    assert!(!bad.status.success());
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn report_matches_metrics_and_rejects_empty_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let o = cign(&["report", empty.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(err.contains("metrics.json") && err.contains("accuracy_matrix.csv"), "{err}");

    assert!(run_into(tmp.path(), &["--tasks", "2"]).status.success());
    let o = cign(&["report", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("metrics.json")).unwrap()).unwrap();
    let av = &metrics["audio_visual"];
    let expected = format!(
        "Audio-Visual  {:>10.4}{:>12.4}",
        av["AvgAcc"].as_f64().unwrap(),
        av["Forgetting"].as_f64().unwrap()
    );
    assert!(stdout(&o).contains(&expected), "{}", stdout(&o));

    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    let last_av = summary.lines().filter(|l| l.starts_with("audio_visual,")).last().unwrap();
    let cols: Vec<&str> = last_av.split(',').collect();
    assert_eq!(cols[2].parse::<f64>().unwrap(), av["AvgAcc"].as_f64().unwrap());
    assert_eq!(cols[3].parse::<f64>().unwrap(), av["Forgetting"].as_f64().unwrap());
}

#[test]
fn report_reproduces_the_worked_example() {
    use cign_core::continual::{AccuracyMatrix, MetricsReport};
    let tmp = tempfile::tempdir().unwrap();
    let m = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.8, 0.7]]).unwrap();
    let ms = [m.clone(), m.clone(), m];
    let r = MetricsReport::from_matrices(&ms).unwrap();
    std::fs::write(tmp.path().join("metrics.json"), serde_json::to_vec(&r).unwrap()).unwrap();
    std::fs::write(tmp.path().join("accuracy_matrix.csv"), cign_core::cli::report::matrices_csv(&ms)).unwrap();
    let o = cign(&["report", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Audio-Visual      0.7500      0.1000"), "{}", stdout(&o));
}
