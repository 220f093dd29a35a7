//! C interface to the planner, smoother and validator.
//!
//! Objects cross the boundary as opaque handles returned through out-pointers
//! and released by the matching `ms_*_free`. Every fallible call
//! returns an [`MsStatus`]; after a failure [`ms_last_error`] describes the
//! cause for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use minsense::belief::{self, BeliefPath};
use minsense::io::{self, Scenario, TraceRow};
use minsense::pipeline::{self, RunConfig};
use minsense::Error;

/// Status code returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Malformed JSON, invalid UTF-8, or an argument out of range.
    InvalidInput = 2,
    /// No admissible path exists.
    NoSolution = 3,
    /// The seed path cannot be certified for smoothing.
    InitInfeasible = 4,
    /// A solver or factorization failed.
    NumericalFailure = 5,
    /// Index outside the object.
    OutOfRange = 6,
    /// Internal panic caught at the boundary.
    Panic = 7,
}

/// Opaque environment plus initial belief.
pub struct MsScenario(Scenario);

/// Opaque belief path.
pub struct MsPath(BeliefPath);

/// Opaque smoothing result.
pub struct MsSmoothResult {
    path: BeliefPath,
    trace: Vec<TraceRow>,
    kf_residual: f64,
}

/// Run parameters. Obtain defaults from [`ms_run_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MsRunConfig {
    pub alpha: f64,
    pub pr: f64,
    pub w_scale: f64,
    /// Transitions of the extracted path; 0 keeps the tree chain.
    pub k: usize,
    pub n_nodes: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub mc_samples: usize,
}

impl From<&MsRunConfig> for RunConfig {
    fn from(c: &MsRunConfig) -> Self {
        RunConfig {
            alpha: c.alpha,
            pr: c.pr,
            w_scale: c.w_scale,
            k: (c.k > 0).then_some(c.k),
            n_nodes: c.n_nodes,
            seed: c.seed,
            max_iters: c.max_iters,
            mc_samples: c.mc_samples,
            ..RunConfig::default()
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::NoSolution(_) => MsStatus::NoSolution,
        Error::InitInfeasible { .. } => MsStatus::InitInfeasible,
        Error::NumericalFailure(_)
        | Error::SingularMatrix(_)
        | Error::SubproblemInfeasible(_)
        | Error::SolverStalled(_) => MsStatus::NumericalFailure,
        _ => MsStatus::InvalidInput,
    }
}

struct Fail(MsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            MsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MsStatus::NullArgument, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: the caller guarantees a non-null `p` came from this library and is live.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Fail(MsStatus::InvalidInput, format!("{what} is not UTF-8: {e}")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { out.write(value) };
    Ok(())
}

/// Message describing the most recent failure on this thread. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn ms_run_config_default() -> MsRunConfig {
    let d = RunConfig::default();
    MsRunConfig {
        alpha: d.alpha,
        pr: d.pr,
        w_scale: d.w_scale,
        k: 0,
        n_nodes: d.n_nodes,
        seed: d.seed,
        max_iters: d.max_iters,
        mc_samples: d.mc_samples,
    }
}

/// Parses an environment JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_scenario_from_json(json: *const c_char, out: *mut *mut MsScenario) -> MsStatus {
    guard(|| {
        let t = unsafe { text(json, "json") }?;
        let sc = io::parse_environment(t)?;
        unsafe { put(out, Box::into_raw(Box::new(MsScenario(sc))), "out") }
    })
}

/// Loads the bundled analogue environment.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_scenario_analog(out: *mut *mut MsScenario) -> MsStatus {
    guard(|| {
        let sc = io::parse_environment(pipeline::ANALOG_ENV)?;
        unsafe { put(out, Box::into_raw(Box::new(MsScenario(sc))), "out") }
    })
}

/// # Safety
/// `s` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_scenario_free(s: *mut MsScenario) {
    if !s.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Grows a belief tree and extracts a seed path.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_plan(sc: *const MsScenario, cfg: *const MsRunConfig, out: *mut *mut MsPath) -> MsStatus {
    guard(|| {
        let sc = unsafe { borrow(sc, "scenario") }?;
        let cfg = RunConfig::from(unsafe { borrow(cfg, "config") }?);
        let p = pipeline::plan(&sc.0, &cfg)?;
        unsafe { put(out, Box::into_raw(Box::new(MsPath(p.path))), "out") }
    })
}

/// Parses a path JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_path_from_json(json: *const c_char, out: *mut *mut MsPath) -> MsStatus {
    guard(|| {
        let t = unsafe { text(json, "json") }?;
        let p = io::parse_path(t)?;
        unsafe { put(out, Box::into_raw(Box::new(MsPath(p))), "out") }
    })
}

/// Serializes a path; release the string with [`ms_string_free`].
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_path_to_json(p: *const MsPath, out: *mut *mut c_char) -> MsStatus {
    guard(|| {
        let p = unsafe { borrow(p, "path") }?;
        let cost = belief::path_cost(&p.0)?;
        let s = io::to_json_string(&io::path_to_json(&p.0, Some(cost)))?;
        let c = CString::new(s).map_err(|e| Fail(MsStatus::InvalidInput, e.to_string()))?;
        unsafe { put(out, c.into_raw(), "out") }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ms_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: created by CString::into_raw in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// # Safety
/// `p` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_path_free(p: *mut MsPath) {
    if !p.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Number of transitions `K`; the path holds `K + 1` states.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_path_transitions(p: *const MsPath, out: *mut usize) -> MsStatus {
    guard(|| {
        let p = unsafe { borrow(p, "path") }?;
        unsafe { put(out, p.0.k(), "out") }
    })
}

/// State dimension.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_path_dim(p: *const MsPath, out: *mut usize) -> MsStatus {
    guard(|| {
        let p = unsafe { borrow(p, "path") }?;
        unsafe { put(out, p.0.dim(), "out") }
    })
}

/// Copies the mean of state `k` (`0..=K`) into `out[0..dim]`.
///
/// # Safety
/// `p` must be a live handle and `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_path_mean(p: *const MsPath, k: usize, out: *mut f64) -> MsStatus {
    guard(|| {
        let p = unsafe { borrow(p, "path") }?;
        let st = p.0.steps.get(k).ok_or_else(|| Fail(MsStatus::OutOfRange, format!("state {k} of {}", p.0.steps.len())))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: the caller provides `dim` doubles.
        unsafe { ptr::copy_nonoverlapping(st.x.as_ptr(), out, st.x.len()) };
        Ok(())
    })
}

/// Total steering cost with the path's own weight.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_path_cost(p: *const MsPath, out: *mut f64) -> MsStatus {
    guard(|| {
        let p = unsafe { borrow(p, "path") }?;
        unsafe { put(out, belief::path_cost(&p.0)?, "out") }
    })
}

/// Runs the convex-concave smoother from `seed`.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_smooth(
    sc: *const MsScenario,
    seed: *const MsPath,
    cfg: *const MsRunConfig,
    out: *mut *mut MsSmoothResult,
) -> MsStatus {
    guard(|| {
        let sc = unsafe { borrow(sc, "scenario") }?;
        let seed = unsafe { borrow(seed, "seed") }?;
        let cfg = RunConfig::from(unsafe { borrow(cfg, "config") }?);
        let r = pipeline::smooth(&sc.0, &seed.0, &cfg)?;
        let res = MsSmoothResult { path: r.path, trace: r.trace, kf_residual: r.kf_residual };
        unsafe { put(out, Box::into_raw(Box::new(res)), "out") }
    })
}

/// Number of trace rows (iteration 0 is the seed).
///
/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_smooth_trace_len(r: *const MsSmoothResult, out: *mut usize) -> MsStatus {
    guard(|| {
        let r = unsafe { borrow(r, "result") }?;
        unsafe { put(out, r.trace.len(), "out") }
    })
}

/// Cost after iteration `i`.
///
/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_smooth_trace_cost(r: *const MsSmoothResult, i: usize, out: *mut f64) -> MsStatus {
    guard(|| {
        let r = unsafe { borrow(r, "result") }?;
        let row = r.trace.get(i).ok_or_else(|| Fail(MsStatus::OutOfRange, format!("row {i} of {}", r.trace.len())))?;
        unsafe { put(out, row.cost, "out") }
    })
}

/// Largest filter-recursion residual of the smoothed path.
///
/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_smooth_kf_residual(r: *const MsSmoothResult, out: *mut f64) -> MsStatus {
    guard(|| {
        let r = unsafe { borrow(r, "result") }?;
        unsafe { put(out, r.kf_residual, "out") }
    })
}

/// Copies the smoothed path into a new handle.
///
/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_smooth_path(r: *const MsSmoothResult, out: *mut *mut MsPath) -> MsStatus {
    guard(|| {
        let r = unsafe { borrow(r, "result") }?;
        unsafe { put(out, Box::into_raw(Box::new(MsPath(r.path.clone()))), "out") }
    })
}

/// # Safety
/// `r` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_smooth_free(r: *mut MsSmoothResult) {
    if !r.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Re-certifies `p` and runs the Monte Carlo check; `passed` is 1 when every
/// check passes and 0 otherwise.
///
/// # Safety
/// Pointers must be valid; `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_validate(
    sc: *const MsScenario,
    p: *const MsPath,
    cfg: *const MsRunConfig,
    passed: *mut i32,
) -> MsStatus {
    guard(|| {
        let sc = unsafe { borrow(sc, "scenario") }?;
        let p = unsafe { borrow(p, "path") }?;
        let cfg = RunConfig::from(unsafe { borrow(cfg, "config") }?);
        let report = pipeline::validate(&sc.0, &p.0, &cfg)?;
        if !report.passed() {
            set_error(&format!("failed checks: {}", report.failed().join(", ")));
        }
        unsafe { put(passed, report.passed() as i32, "passed") }
    })
}
