//! C ABI over `cign-core`.
//!
//! Every fallible function returns a [`CignStatus`]; on failure the message is
//! available from [`cign_last_error`] on the same thread. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cign_core::cli::{gradcheck, write_run, ExperimentConfig};
use cign_core::continual::{run_sequence, RunOutput};
use cign_core::data::{generate_synthetic, load_features, save_features, FeatureDataset};
use cign_core::CignError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CignStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Corrupt = 5,
    Numeric = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Which prediction head a metric refers to.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CignModality {
    Audio = 0,
    Visual = 1,
    AudioVisual = 2,
}

/// Experiment configuration.
pub struct CignExperiment {
    config: ExperimentConfig,
}

/// In-memory feature dataset.
pub struct CignDataset {
    data: FeatureDataset,
}

/// Outcome of one training run.
pub struct CignResults {
    config: ExperimentConfig,
    run: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &CignError) -> CignStatus {
    match err {
        CignError::Config(_) | CignError::Json(_) => CignStatus::Config,
        CignError::Io { .. } | CignError::MissingArtifacts { .. } => CignStatus::Io,
        CignError::Corrupt { .. } | CignError::Version { .. } => CignStatus::Corrupt,
        CignError::NonFiniteGradient { .. } | CignError::NonFiniteLoss { .. } => CignStatus::Numeric,
        _ => CignStatus::InvalidArgument,
    }
}

struct Fail(CignStatus, String);

impl From<CignError> for Fail {
    fn from(e: CignError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CignStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CignStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CignStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(CignStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(CignStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail(CignStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(CignStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cign_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an experiment from a flat JSON object. NULL or `"{}"` gives the
/// defaults; unknown keys are rejected.
///
/// # Safety
/// `json` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_experiment_new(json: *const c_char, out: *mut *mut CignExperiment) -> CignStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = if json.is_null() {
            ExperimentConfig::default()
        } else {
            serde_json::from_str(&string_arg(json, "json")?).map_err(CignError::from)?
        };
        config.validate()?;
        *out = Box::into_raw(Box::new(CignExperiment { config }));
        Ok(())
    })
}

/// Overrides the training seed (and the synthetic data seed unless one was
/// set explicitly).
///
/// # Safety
/// `exp` must be a live handle from [`cign_experiment_new`].
#[no_mangle]
pub unsafe extern "C" fn cign_experiment_set_seed(exp: *mut CignExperiment, seed: u64) -> CignStatus {
    guard(|| {
        out_ptr(exp, "experiment")?.config.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cign_experiment_free(exp: *mut CignExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Generates the experiment's synthetic dataset.
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_dataset_synthetic(exp: *const CignExperiment, out: *mut *mut CignDataset) -> CignStatus {
    guard(|| {
        let exp = deref(exp, "experiment")?;
        let out = out_ptr(out, "out")?;
        let data = generate_synthetic(&exp.config.synthetic())?;
        *out = Box::into_raw(Box::new(CignDataset { data }));
        Ok(())
    })
}

/// Loads a feature directory written by [`cign_dataset_save`] or `cign synth`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_dataset_load(dir: *const c_char, out: *mut *mut CignDataset) -> CignStatus {
    guard(|| {
        let dir = PathBuf::from(string_arg(dir, "dir")?);
        let out = out_ptr(out, "out")?;
        let data = load_features(&dir)?;
        *out = Box::into_raw(Box::new(CignDataset { data }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn cign_dataset_save(ds: *const CignDataset, dir: *const c_char) -> CignStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        save_features(&ds.data, &PathBuf::from(string_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Total number of samples over all splits.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_dataset_len(ds: *const CignDataset, out: *mut usize) -> CignStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(ds, "dataset")?.data.samples.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cign_dataset_free(ds: *mut CignDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains over the full task sequence.
///
/// # Safety
/// `exp` and `ds` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_run(
    exp: *const CignExperiment,
    ds: *const CignDataset,
    out: *mut *mut CignResults,
) -> CignStatus {
    guard(|| {
        let exp = deref(exp, "experiment")?;
        let ds = deref(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let run = run_sequence(&ds.data, &exp.config.train())?;
        *out = Box::into_raw(Box::new(CignResults {
            config: exp.config.clone(),
            run,
        }));
        Ok(())
    })
}

/// Number of tasks in the run.
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_results_num_tasks(res: *const CignResults, out: *mut usize) -> CignStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(res, "results")?.run.matrices[0].tasks();
        Ok(())
    })
}

/// Final Average Accuracy and Forgetting of one head. Forgetting is NaN for a
/// single-task run.
///
/// # Safety
/// `res` must be a live handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_results_metrics(
    res: *const CignResults,
    modality: CignModality,
    avg_acc: *mut f64,
    forgetting: *mut f64,
) -> CignStatus {
    guard(|| {
        let r = &deref(res, "results")?.run.report;
        let m = match modality {
            CignModality::Audio => &r.audio,
            CignModality::Visual => &r.visual,
            CignModality::AudioVisual => &r.audio_visual,
        };
        *out_ptr(avg_acc, "avg_acc")? = m.avg_acc;
        *out_ptr(forgetting, "forgetting")? = m.forgetting.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Accuracy on task `task` measured after training task `after_task`.
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_results_accuracy(
    res: *const CignResults,
    modality: CignModality,
    after_task: usize,
    task: usize,
    out: *mut f64,
) -> CignStatus {
    guard(|| {
        let m = &deref(res, "results")?.run.matrices[modality as usize];
        let out = out_ptr(out, "out")?;
        match m.rows().get(after_task).and_then(|row| row.get(task)) {
            Some(&a) => {
                *out = a;
                Ok(())
            }
            None => Err(Fail(
                CignStatus::OutOfRange,
                format!("no accuracy for task {task} after task {after_task}"),
            )),
        }
    })
}

/// Writes the run artifacts (config, accuracy matrix, log, metrics) to `dir`.
///
/// # Safety
/// `res` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn cign_results_write(res: *const CignResults, dir: *const c_char) -> CignStatus {
    guard(|| {
        let res = deref(res, "results")?;
        write_run(&PathBuf::from(string_arg(dir, "dir")?), &res.config, &res.run)?;
        Ok(())
    })
}

/// # Safety
/// `res` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cign_results_free(res: *mut CignResults) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Runs the gradient-check suite. `passed` is set to whether every check is
/// within tolerance; `max_rel_error` to the worst error seen.
///
/// # Safety
/// Both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cign_gradcheck(
    seed: u64,
    inject_fault: bool,
    max_rel_error: *mut f64,
    passed: *mut bool,
) -> CignStatus {
    guard(|| {
        let max_out = out_ptr(max_rel_error, "max_rel_error")?;
        let passed_out = out_ptr(passed, "passed")?;
        let report = gradcheck::run_suite(seed, inject_fault)?;
        *max_out = report.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
        *passed_out = report.passed();
        Ok(())
    })
}
