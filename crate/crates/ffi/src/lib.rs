//! C ABI over `slowcal-core`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`SlowcalStatus`]; on failure the message is available from
//! [`slowcal_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use slowcal_core::algorithms::{Algorithm, Problem, RunConfig, Trajectory};
use slowcal_core::objectives::{CurvatureKind, ProblemMetadata, QuadraticSpec};
use slowcal_core::tuning::{rmin, theoretical_lr, LrInputs, RateMethod};
use slowcal_core::weights::WeightSchedule;
use slowcal_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlowcalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    InvalidArgument = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Quadratic ensemble with its computed constants.
pub struct SlowcalProblem {
    problem: Problem,
    metadata: ProblemMetadata,
}

/// Result of one run.
pub struct SlowcalTrajectory {
    inner: Trajectory,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SlowcalMetadata {
    pub smoothness: f64,
    pub sigma: f64,
    pub gstar: f64,
    pub b0: f64,
    pub optimum_value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SlowcalStatus, message: impl Into<String>) -> SlowcalStatus {
    set_error(message.into());
    status
}

fn from_core(e: Error) -> SlowcalStatus {
    let status = match e {
        Error::InvalidConfig(_)
        | Error::Field { .. }
        | Error::LearningRate(_)
        | Error::UnknownMethod(_)
        | Error::Dimension { .. }
        | Error::MachineIndex { .. } => SlowcalStatus::InvalidArgument,
        _ => SlowcalStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> SlowcalStatus) -> SlowcalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == SlowcalStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => fail(SlowcalStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, SlowcalStatus> {
    if s.is_null() {
        return Err(fail(SlowcalStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(SlowcalStatus::InvalidString, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn slowcal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a random quadratic ensemble started at the origin.
/// `gstar < 0` leaves the heterogeneity unnormalized.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn slowcal_quadratic_new(
    dim: usize,
    machines: usize,
    shared_curvature: bool,
    eig_min: f64,
    eig_max: f64,
    center_norm: f64,
    gstar: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut SlowcalProblem,
) -> SlowcalStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlowcalStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let spec = QuadraticSpec {
            dim,
            machines,
            curvature: if shared_curvature {
                CurvatureKind::Shared
            } else {
                CurvatureKind::PerMachine
            },
            eig_min,
            eig_max,
            center_norm,
            center_spread: 1.0,
            gstar_target: (gstar >= 0.0).then_some(gstar),
            sigma,
            seed,
        };
        let built = spec.build().and_then(|q| {
            let q = Arc::new(q);
            let problem = Problem::from_origin(q.clone())?;
            let metadata = ProblemMetadata::compute(q.as_ref(), &problem.start)?;
            Ok(SlowcalProblem { problem, metadata })
        });
        match built {
            Ok(p) => {
                *out = Box::into_raw(Box::new(p));
                SlowcalStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `problem` must come from `slowcal_quadratic_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slowcal_problem_free(problem: *mut SlowcalProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slowcal_problem_dim(problem: *const SlowcalProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.problem.objective.dim())
}

/// # Safety
/// `problem` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slowcal_problem_metadata(
    problem: *const SlowcalProblem,
    out: *mut SlowcalMetadata,
) -> SlowcalStatus {
    guard(|| {
        let (Some(p), false) = (problem.as_ref(), out.is_null()) else {
            return fail(SlowcalStatus::NullPointer, "problem or out is null");
        };
        let m = &p.metadata;
        *out = SlowcalMetadata {
            smoothness: m.smoothness,
            sigma: m.sigma,
            gstar: m.gstar,
            b0: m.b0,
            optimum_value: m.optimum_value,
        };
        SlowcalStatus::Ok
    })
}

/// Runs `algorithm` (`minibatch`, `local`, `local-weighted`, `anytime`,
/// `slowcal`) with weight schedule `schedule` (`uniform`, `linear`,
/// `poly:<p>`).
///
/// # Safety
/// `problem` must be a live handle, the strings NUL-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn slowcal_run(
    problem: *const SlowcalProblem,
    algorithm: *const c_char,
    schedule: *const c_char,
    machines: usize,
    local_steps: usize,
    rounds: usize,
    eta: f64,
    seed: u64,
    out: *mut *mut SlowcalTrajectory,
) -> SlowcalStatus {
    guard(|| {
        let (Some(p), false) = (problem.as_ref(), out.is_null()) else {
            return fail(SlowcalStatus::NullPointer, "problem or out is null");
        };
        *out = ptr::null_mut();
        let alg = match read_str(algorithm, "algorithm") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let sched = match read_str(schedule, "schedule") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let run = alg.parse::<Algorithm>().and_then(|alg| {
            let cfg = RunConfig {
                machines,
                local_steps,
                rounds,
                eta,
                schedule: sched.parse::<WeightSchedule>()?,
                seed,
                record_diagnostics: false,
            };
            alg.run(&p.problem, &cfg)
        });
        match run {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SlowcalTrajectory { inner }));
                SlowcalStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `trajectory` must come from `slowcal_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn slowcal_trajectory_free(trajectory: *mut SlowcalTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Excess loss of the last round; `+inf` for a null handle.
///
/// # Safety
/// `trajectory` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slowcal_trajectory_final_excess_loss(trajectory: *const SlowcalTrajectory) -> f64 {
    trajectory.as_ref().map_or(f64::INFINITY, |t| t.inner.final_excess_loss())
}

/// # Safety
/// `trajectory` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slowcal_trajectory_diverged(trajectory: *const SlowcalTrajectory) -> bool {
    trajectory.as_ref().is_none_or(|t| t.inner.diverged)
}

/// # Safety
/// `trajectory` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn slowcal_trajectory_rounds(trajectory: *const SlowcalTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.inner.rounds.len())
}

/// Copies the output point into `buf`, which must hold `dim` values.
///
/// # Safety
/// `trajectory` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn slowcal_trajectory_output(
    trajectory: *const SlowcalTrajectory,
    buf: *mut f64,
    len: usize,
) -> SlowcalStatus {
    guard(|| {
        let (Some(t), false) = (trajectory.as_ref(), buf.is_null()) else {
            return fail(SlowcalStatus::NullPointer, "trajectory or buf is null");
        };
        let x = &t.inner.output;
        if len < x.len() {
            return fail(
                SlowcalStatus::BufferTooSmall,
                format!("buffer holds {len} values, output has {}", x.len()),
            );
        }
        ptr::copy_nonoverlapping(x.as_ptr(), buf, x.len());
        SlowcalStatus::Ok
    })
}

/// Theoretical step size for SLowcal-SGD with linear weights.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slowcal_theoretical_lr(
    smoothness: f64,
    sigma: f64,
    gstar: f64,
    b0: f64,
    machines: usize,
    local_steps: usize,
    rounds: usize,
    out: *mut f64,
) -> SlowcalStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlowcalStatus::NullPointer, "out is null");
        }
        let inputs = LrInputs {
            smoothness,
            sigma,
            gstar,
            b0,
            machines,
            local_steps,
            rounds,
        };
        match theoretical_lr(&inputs) {
            Ok(eta) => {
                *out = eta;
                SlowcalStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Rounds needed before `method` (`minibatch`, `accelerated-minibatch`,
/// `local`, `slowcal`) reaches its optimal rate.
///
/// # Safety
/// `method` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slowcal_rmin(
    method: *const c_char,
    machines: usize,
    local_steps: usize,
    gstar: f64,
    out: *mut f64,
) -> SlowcalStatus {
    guard(|| {
        if out.is_null() {
            return fail(SlowcalStatus::NullPointer, "out is null");
        }
        let name = match read_str(method, "method") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match name
            .parse::<RateMethod>()
            .and_then(|m| rmin(m, machines, local_steps, gstar))
        {
            Ok(r) => {
                *out = r;
                SlowcalStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
