//! C ABI over the simulator.
//!
//! Every call returns a [`DebseStatus`]; on failure the message is kept per
//! thread and read back with [`debse_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use debse::error::Error;
use debse::orchestrator::{monte_carlo_sweep, simulate, SimTrace, SweepSummary};
use debse::scenarios::{builtin, parse_scenario_spec, Scenario};
use debse::trigger::{CostSchedule, TriggerKind};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Parse = 5,
    Dimension = 6,
    Solver = 7,
    Numerical = 8,
    Io = 9,
    Internal = 10,
    OutOfRange = 11,
    Panic = 12,
}

/// Trigger law selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebseTrigger {
    Et = 0,
    Pt = 1,
    St = 2,
}

impl From<DebseTrigger> for TriggerKind {
    fn from(t: DebseTrigger) -> Self {
        match t {
            DebseTrigger::Et => TriggerKind::Et,
            DebseTrigger::Pt => TriggerKind::Pt,
            DebseTrigger::St => TriggerKind::St,
        }
    }
}

/// Opaque scenario handle.
pub struct DebseScenario(Scenario);

/// Opaque simulation trace handle.
pub struct DebseTrace(SimTrace);

/// Opaque sweep result handle.
pub struct DebseSweep(SweepSummary);

/// Summary of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DebseRunStats {
    pub steps: usize,
    pub agents: usize,
    pub comm: f64,
    pub err: f64,
    pub err_hat: f64,
    /// NaN when the scenario has no tracking reference.
    pub tracking: f64,
}

/// One cost point of a sweep.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DebseSweepPoint {
    pub cost: f64,
    pub comm_avg: f64,
    pub err_avg: f64,
    pub err_std: f64,
    pub runs: usize,
    /// NaN when the scenario has no tracking reference.
    pub tracking_avg: f64,
    pub tracking_std: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(DebseStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => DebseStatus::Dimension,
            Error::SolverFailure { .. } => DebseStatus::Solver,
            Error::Numerical(_) => DebseStatus::Numerical,
            Error::Contract(_) => DebseStatus::InvalidArgument,
            Error::Invariant(_) => DebseStatus::Internal,
            Error::Config(_) => DebseStatus::Config,
            Error::Parse { .. } => DebseStatus::Parse,
            Error::Io { .. } => DebseStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: DebseStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DebseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DebseStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            DebseStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(DebseStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| {
        fail(
            DebseStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(
        || fail(DebseStatus::NullPointer, format!("{what} is null")),
        Ok,
    )
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(
        || fail(DebseStatus::NullPointer, format!("{what} is null")),
        Ok,
    )
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn debse_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn debse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a built-in scenario by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_scenario_builtin(
    name: *const c_char,
    out: *mut *mut DebseScenario,
) -> DebseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let sc = builtin(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(DebseScenario(sc)));
        Ok(())
    })
}

/// Parses and builds a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_scenario_from_json(
    json: *const c_char,
    out: *mut *mut DebseScenario,
) -> DebseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let spec = parse_scenario_spec(text, std::path::Path::new("<json>"))?;
        *out = Box::into_raw(Box::new(DebseScenario(spec.build()?)));
        Ok(())
    })
}

/// Number of agents in the scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_scenario_agents(
    scenario: *const DebseScenario,
    out: *mut usize,
) -> DebseStatus {
    guard(|| {
        let sc = ref_arg(scenario, "scenario")?;
        *out_arg(out, "out")? = sc.0.agents.len();
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn debse_scenario_free(scenario: *mut DebseScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulates one seeded run with a constant cost and keeps the full trace.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_simulate(
    scenario: *const DebseScenario,
    trigger: DebseTrigger,
    horizon_m: usize,
    cost: f64,
    seed: u64,
    out: *mut *mut DebseTrace,
) -> DebseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let sc = ref_arg(scenario, "scenario")?;
        let trace = simulate(
            &sc.0,
            trigger.into(),
            horizon_m,
            &CostSchedule::Constant(cost),
            seed,
            true,
        )?;
        *out = Box::into_raw(Box::new(DebseTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_trace_stats(
    trace: *const DebseTrace,
    out: *mut DebseRunStats,
) -> DebseStatus {
    guard(|| {
        let s = &ref_arg(trace, "trace")?.0.stats;
        *out_arg(out, "out")? = DebseRunStats {
            steps: s.steps,
            agents: s.agents,
            comm: s.comm,
            err: s.err,
            err_hat: s.err_hat,
            tracking: s.tracking.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Squared remote error `‖e_k‖²` and decision `γ_k` of one agent at step
/// `k` (1-based; `k = 0` is the initial state, where `γ` is 0).
///
/// # Safety
/// `trace` must be a live handle; `error` and `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_trace_step(
    trace: *const DebseTrace,
    k: usize,
    agent: usize,
    error: *mut f64,
    gamma: *mut u8,
) -> DebseStatus {
    guard(|| {
        let t = &ref_arg(trace, "trace")?.0;
        let rec = if k == 0 {
            &t.initial
        } else {
            match t.records.get(k - 1) {
                Some(r) => r,
                None => {
                    return fail(
                        DebseStatus::OutOfRange,
                        format!("step {k} beyond {}", t.len()),
                    )
                }
            }
        };
        let Some(a) = rec.agents.get(agent) else {
            return fail(
                DebseStatus::OutOfRange,
                format!("agent {agent} out of range"),
            );
        };
        let error = out_arg(error, "error")?;
        let gamma = out_arg(gamma, "gamma")?;
        *error = a.e;
        *gamma = a.gamma as u8;
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn debse_trace_free(trace: *mut DebseTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Monte Carlo sweep over `n_costs` constant costs.
///
/// # Safety
/// `scenario` must be a live handle, `costs` must point to `n_costs`
/// doubles, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_sweep(
    scenario: *const DebseScenario,
    trigger: DebseTrigger,
    horizon_m: usize,
    costs: *const f64,
    n_costs: usize,
    runs: usize,
    seed: u64,
    out: *mut *mut DebseSweep,
) -> DebseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let sc = ref_arg(scenario, "scenario")?;
        if costs.is_null() && n_costs > 0 {
            return fail(DebseStatus::NullPointer, "costs is null");
        }
        let grid = if n_costs == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(costs, n_costs)
        };
        let summary = monte_carlo_sweep(&sc.0, trigger.into(), horizon_m, grid, runs, seed)?;
        *out = Box::into_raw(Box::new(DebseSweep(summary)));
        Ok(())
    })
}

/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_sweep_len(sweep: *const DebseSweep, out: *mut usize) -> DebseStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(sweep, "sweep")?.0.points.len();
        Ok(())
    })
}

/// # Safety
/// `sweep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn debse_sweep_point(
    sweep: *const DebseSweep,
    index: usize,
    out: *mut DebseSweepPoint,
) -> DebseStatus {
    guard(|| {
        let s = &ref_arg(sweep, "sweep")?.0;
        let Some(p) = s.points.get(index) else {
            return fail(
                DebseStatus::OutOfRange,
                format!("point {index} of {}", s.points.len()),
            );
        };
        *out_arg(out, "out")? = DebseSweepPoint {
            cost: p.cost,
            comm_avg: p.comm_avg,
            err_avg: p.err_avg,
            err_std: p.err_std,
            runs: p.runs,
            tracking_avg: p.tracking_avg.unwrap_or(f64::NAN),
            tracking_std: p.tracking_std.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// # Safety
/// `sweep` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn debse_sweep_free(sweep: *mut DebseSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}
