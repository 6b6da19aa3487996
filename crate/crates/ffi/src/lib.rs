//! C interface to the two-stage IRL pipeline.
//!
//! Every fallible call returns a [`CirlStatus`]; on failure the message is
//! available from [`cirl_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use consensus_irl::cli::{load_input, synthesize, write_synth, RunConfig, StateSpace};
use consensus_irl::io::{create_dir, write_json};
use consensus_irl::synth::{evaluate_recovery, SyntheticWorld};
use consensus_irl::{run_two_stage, Error, TrajectorySet, TwoStageResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CirlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Schema = 3,
    Parameter = 4,
    Empty = 5,
    Numeric = 6,
    Io = 7,
    Panic = 8,
}

/// A demonstration set with its state and action counts, plus ground truth
/// when it was synthesized.
pub struct CirlDataset {
    trajectories: TrajectorySet,
    n_states: usize,
    n_actions: usize,
    world: Option<SyntheticWorld>,
    labels: Option<Vec<(String, bool)>>,
}

/// Result of a two-stage run.
pub struct CirlRun {
    result: TwoStageResult,
}

/// Ground-truth recovery metrics. Precision and recall are NaN when undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CirlRecovery {
    pub spearman_stage1: f64,
    pub spearman_stage2: f64,
    pub policy_agreement_1: f64,
    pub policy_agreement_2: f64,
    pub evd_1: f64,
    pub evd_2: f64,
    pub prune_precision: f64,
    pub prune_recall: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CirlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Schema { .. } => CirlStatus::Schema,
            Error::Parameter { .. } => CirlStatus::Parameter,
            Error::Empty { .. } => CirlStatus::Empty,
            Error::Numeric { .. } => CirlStatus::Numeric,
            Error::Io { .. } | Error::Csv { .. } | Error::Json { .. } => CirlStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CirlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            CirlStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CirlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CirlStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CirlStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

/// A null or empty string yields the default configuration.
unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Failure> {
    let mut config: RunConfig = if p.is_null() {
        RunConfig::default()
    } else {
        let text = str_arg(p, "config_json")?;
        if text.trim().is_empty() {
            RunConfig::default()
        } else {
            serde_json::from_str(text)
                .map_err(|e| Failure(CirlStatus::InvalidArgument, format!("config: {e}")))?
        }
    };
    config.derive_seeds();
    Ok(config)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slot<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, Failure> {
    let slot = p.as_mut().ok_or_else(|| null(what))?;
    *slot = ptr::null_mut();
    Ok(slot)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cirl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load `trajectories.csv` (and `space.json`, `world.json`, `labels.csv` when
/// present) from a run directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_load(dir: *const c_char, out: *mut *mut CirlDataset) -> CirlStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let input = load_input(&PathBuf::from(str_arg(dir, "dir")?))?;
        *slot = Box::into_raw(Box::new(CirlDataset {
            trajectories: input.trajectories,
            n_states: input.space.n_states,
            n_actions: input.space.n_actions,
            world: input.world,
            labels: input.labels,
        }));
        Ok(())
    })
}

/// Generate a synthetic world and expert population from a JSON run config
/// (null for defaults).
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_synthesize(config_json: *const c_char, out: *mut *mut CirlDataset) -> CirlStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let config = config_arg(config_json)?;
        let (world, population) = synthesize(&config)?;
        *slot = Box::into_raw(Box::new(CirlDataset {
            trajectories: population.trajectories,
            n_states: world.n_states,
            n_actions: world.n_actions,
            world: Some(world),
            labels: Some(population.labels),
        }));
        Ok(())
    })
}

/// Write the dataset in the layout `cirl_dataset_load` reads.
///
/// # Safety
/// `dataset` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_write(dataset: *const CirlDataset, dir: *const c_char) -> CirlStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        create_dir(&dir)?;
        match (&d.world, &d.labels) {
            (Some(world), Some(labels)) => {
                write_synth(&dir, world, &d.trajectories, labels)?;
            }
            _ => {
                d.trajectories.write_csv(&dir.join("trajectories.csv"))?;
                let space = StateSpace {
                    n_states: d.n_states,
                    n_actions: d.n_actions,
                };
                write_json(&dir.join("space.json"), &space)?;
            }
        }
        Ok(())
    })
}

/// Number of trajectories; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_len(dataset: *const CirlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.trajectories.len())
}

/// # Safety
/// `dataset` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_n_states(dataset: *const CirlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.n_states)
}

/// # Safety
/// `dataset` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_n_actions(dataset: *const CirlDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.n_actions)
}

/// # Safety
/// `dataset` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_dataset_free(dataset: *mut CirlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Train, prune and retrain using the `irl` and `prune` sections of a JSON
/// run config (null for defaults).
///
/// # Safety
/// `dataset` must come from this library; `config_json` must be null or
/// NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_two_stage(
    dataset: *const CirlDataset,
    config_json: *const c_char,
    out: *mut *mut CirlRun,
) -> CirlStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let d = handle(dataset, "dataset")?;
        let config = config_arg(config_json)?;
        let result = run_two_stage(&d.trajectories, d.n_states, d.n_actions, &config.irl, &config.prune)?;
        *slot = Box::into_raw(Box::new(CirlRun { result }));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_n_states(run: *const CirlRun) -> usize {
    run.as_ref().map_or(0, |r| r.result.n_states)
}

/// # Safety
/// `run` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_n_pruned(run: *const CirlRun) -> usize {
    run.as_ref().map_or(0, |r| r.result.pruned.len())
}

fn stage_check(stage: u32) -> Result<(), Failure> {
    if stage == 1 || stage == 2 {
        Ok(())
    } else {
        Err(Failure(CirlStatus::InvalidArgument, format!("stage must be 1 or 2, got {stage}")))
    }
}

fn len_check(len: usize, needed: usize) -> Result<(), Failure> {
    if len < needed {
        Err(Failure(
            CirlStatus::InvalidArgument,
            format!("buffer holds {len} values, need {needed}"),
        ))
    } else {
        Ok(())
    }
}

/// Copy the per-state rewards of `stage` (1 or 2) into `out[0..len]`.
/// `len` must be at least `cirl_run_n_states(run)`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_rewards(run: *const CirlRun, stage: u32, out: *mut f64, len: usize) -> CirlStatus {
    guard(|| {
        let r = &handle(run, "run")?.result;
        stage_check(stage)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rewards = if stage == 1 { &r.reward_stage1.rewards } else { &r.reward_stage2.rewards };
        len_check(len, rewards.len())?;
        ptr::copy_nonoverlapping(rewards.as_ptr(), out, rewards.len());
        Ok(())
    })
}

/// Copy the greedy policy of `stage` (1 or 2) into `out[0..len]`.
///
/// # Safety
/// `out` must point to `len` writable `uint32_t`.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_policy(run: *const CirlRun, stage: u32, out: *mut u32, len: usize) -> CirlStatus {
    guard(|| {
        let r = &handle(run, "run")?.result;
        stage_check(stage)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let policy = if stage == 1 { &r.policy_stage1 } else { &r.policy_stage2 };
        len_check(len, policy.actions.len())?;
        let out = std::slice::from_raw_parts_mut(out, policy.actions.len());
        for (o, &a) in out.iter_mut().zip(&policy.actions) {
            *o = a as u32;
        }
        Ok(())
    })
}

/// Compare a run against the dataset's ground truth. Fails with
/// `CIRL_STATUS_EMPTY` when the dataset was not synthesized.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_recovery(
    run: *const CirlRun,
    dataset: *const CirlDataset,
    out: *mut CirlRecovery,
) -> CirlStatus {
    guard(|| {
        let r = &handle(run, "run")?.result;
        let d = handle(dataset, "dataset")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (Some(world), Some(labels)) = (&d.world, &d.labels) else {
            return Err(Failure(CirlStatus::Empty, "dataset has no ground truth".into()));
        };
        let m = evaluate_recovery(world, r, labels)?;
        *out = CirlRecovery {
            spearman_stage1: m.spearman_stage1,
            spearman_stage2: m.spearman_stage2,
            policy_agreement_1: m.policy_agreement_1,
            policy_agreement_2: m.policy_agreement_2,
            evd_1: m.evd_1,
            evd_2: m.evd_2,
            prune_precision: m.prune_precision.unwrap_or(f64::NAN),
            prune_recall: m.prune_recall.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Write reward files, scores, per-state deltas and training logs into `dir`.
///
/// # Safety
/// Handles must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_write(run: *const CirlRun, dataset: *const CirlDataset, dir: *const c_char) -> CirlStatus {
    guard(|| {
        let r = &handle(run, "run")?.result;
        let d = handle(dataset, "dataset")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        create_dir(&dir)?;
        r.write_artifacts(&dir, &d.trajectories)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cirl_run_free(run: *mut CirlRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
