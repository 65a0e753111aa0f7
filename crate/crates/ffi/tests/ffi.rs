use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cign::*;

fn last_error() -> String {
    let p = cign_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn experiment(json: &str) -> *mut CignExperiment {
    let json = CString::new(json).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { cign_experiment_new(json.as_ptr(), &mut exp) }, CignStatus::Ok);
    exp
}

const TINY: &str = r#"{"tasks": 2, "num_classes": 4, "dim": 8, "patches": 2, "depth": 1,
    "epochs": 2, "train_per_class": 10, "test_per_class": 5, "buffer_capacity": 4}"#;

#[test]
fn run_through_the_c_abi() {
    let exp = experiment(TINY);
    let mut ds = ptr::null_mut();
    let mut res = ptr::null_mut();
    unsafe {
        assert_eq!(cign_dataset_synthetic(exp, &mut ds), CignStatus::Ok);
        let mut n = 0usize;
        assert_eq!(cign_dataset_len(ds, &mut n), CignStatus::Ok);
        assert_eq!(n, 4 * 15);

        assert_eq!(cign_run(exp, ds, &mut res), CignStatus::Ok);
        let mut tasks = 0usize;
        assert_eq!(cign_results_num_tasks(res, &mut tasks), CignStatus::Ok);
        assert_eq!(tasks, 2);

        let (mut acc, mut fgt) = (f64::NAN, f64::NAN);
        assert_eq!(cign_results_metrics(res, CignModality::AudioVisual, &mut acc, &mut fgt), CignStatus::Ok);
        assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&fgt));

        let (mut a0, mut a1) = (0.0, 0.0);
        assert_eq!(cign_results_accuracy(res, CignModality::AudioVisual, 1, 0, &mut a0), CignStatus::Ok);
        assert_eq!(cign_results_accuracy(res, CignModality::AudioVisual, 1, 1, &mut a1), CignStatus::Ok);
        assert!(((a0 + a1) / 2.0 - acc).abs() < 1e-12);
        assert_eq!(
            cign_results_accuracy(res, CignModality::AudioVisual, 0, 1, &mut a0),
            CignStatus::OutOfRange
        );
        assert!(last_error().contains("task 1"));

        let dir = tempfile::tempdir().unwrap();
        let out = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(cign_results_write(res, out.as_ptr()), CignStatus::Ok);
        assert!(dir.path().join("accuracy_matrix.csv").is_file());
        assert!(dir.path().join("metrics.json").is_file());

        cign_results_free(res);
        cign_dataset_free(ds);
        cign_experiment_free(exp);
    }
}

#[test]
fn dataset_round_trip_and_corruption() {
    let exp = experiment(TINY);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(cign_dataset_synthetic(exp, &mut ds), CignStatus::Ok);
        assert_eq!(cign_dataset_save(ds, path.as_ptr()), CignStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(cign_dataset_load(path.as_ptr(), &mut back), CignStatus::Ok);
        let (mut a, mut b) = (0usize, 0usize);
        cign_dataset_len(ds, &mut a);
        cign_dataset_len(back, &mut b);
        assert_eq!(a, b);
        cign_dataset_free(back);
        cign_dataset_free(ds);

        let payload = dir.path().join("features.bin");
        let mut bytes = std::fs::read(&payload).unwrap();
        bytes[7] ^= 0x40;
        std::fs::write(&payload, bytes).unwrap();
        let mut bad = ptr::null_mut();
        assert_eq!(cign_dataset_load(path.as_ptr(), &mut bad), CignStatus::Corrupt);
        assert!(bad.is_null());
        cign_experiment_free(exp);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut exp = ptr::null_mut();
        let bad = CString::new(r#"{"tasks": 0}"#).unwrap();
        assert_eq!(cign_experiment_new(bad.as_ptr(), &mut exp), CignStatus::Config);
        assert!(exp.is_null());
        let unknown = CString::new(r#"{"taks": 2}"#).unwrap();
        assert_eq!(cign_experiment_new(unknown.as_ptr(), &mut exp), CignStatus::Config);
        assert!(last_error().contains("taks"));

        assert_eq!(cign_experiment_new(ptr::null(), ptr::null_mut()), CignStatus::NullPointer);
        let mut n = 0usize;
        assert_eq!(cign_dataset_len(ptr::null(), &mut n), CignStatus::NullPointer);

        let missing = CString::new("/nonexistent/cign-features").unwrap();
        let mut ds = ptr::null_mut();
        assert_eq!(cign_dataset_load(missing.as_ptr(), &mut ds), CignStatus::Io);

        assert_eq!(cign_experiment_new(ptr::null(), &mut exp), CignStatus::Ok);
        assert!(cign_last_error().is_null());
        assert_eq!(cign_experiment_set_seed(exp, 9), CignStatus::Ok);
        cign_experiment_free(exp);
        cign_experiment_free(ptr::null_mut());
    }
}

#[test]
fn gradcheck_reports_pass_and_injected_fault() {
    let (mut err, mut ok) = (f64::NAN, false);
    unsafe {
        assert_eq!(cign_gradcheck(0, false, &mut err, &mut ok), CignStatus::Ok);
        assert!(ok && err <= 1e-4, "{err}");
        assert_eq!(cign_gradcheck(0, true, &mut err, &mut ok), CignStatus::Ok);
        assert!(!ok && err > 1e-4);
    }
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cign.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "typedef struct CignExperiment CignExperiment;",
        "CIGN_STATUS_OK = 0",
        "cign_last_error(void)",
        "cign_run(",
        "cign_results_free(",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let probe = tempfile::Builder::new().suffix(".c").tempfile().unwrap();
    std::fs::write(
        probe.path(),
        "#include \"cign.h\"\nint main(void) { CignStatus s = CIGN_STATUS_OK; return (int)s; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(probe.path())
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler found; skipping the compile probe");
            return;
        }
    };
    assert!(status.success());
}
