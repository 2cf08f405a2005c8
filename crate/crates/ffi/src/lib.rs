//! C bindings for the discovery pipeline.
//!
//! Every object crosses the boundary as an opaque pointer owned by this
//! library; configs cross as JSON strings so the ABI stays flat. All entry
//! points return a status code, never unwind, and leave a thread-local
//! message readable through `cmrl_last_error` on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cmrl::discovery::{discover, CausalGraph, DiscoveryConfig, DiscoveryReport};
use cmrl::error::Error;
use cmrl::memory::{augment_dataset, MemoryUnit};
use cmrl::planner::{fit_model, value_iteration, AugmentedStateIndex, PolicyTable};
use cmrl::sim::eval::evaluate_policy;
use cmrl::sim::{collect_random, TaskConfig};
use cmrl::trajectory::Dataset;
use serde::{Deserialize, Serialize};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmrlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A JSON config or document failed to parse.
    BadJson = 3,
    /// A config value was rejected.
    Config = 4,
    Io = 5,
    /// Dataset or schema violated an invariant.
    Data = 6,
    /// An estimator or solver failed numerically.
    Numeric = 7,
    /// The library caught a panic; state may be stale but memory is intact.
    Panic = 8,
}

pub struct CmrlDataset {
    inner: Dataset,
}

pub struct CmrlGraph {
    graph: CausalGraph,
    report: DiscoveryReport,
}

pub struct CmrlPolicy {
    table: PolicyTable,
    units: Vec<MemoryUnit>,
    gamma: f64,
    sweeps: usize,
    residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CmrlStatus {
    match err {
        Error::Config(_) => CmrlStatus::Config,
        Error::Io(_) => CmrlStatus::Io,
        Error::AllZeroWeights
        | Error::DegenerateBall(_)
        | Error::NoFiniteGain
        | Error::Nonconvergence { .. } => CmrlStatus::Numeric,
        _ => CmrlStatus::Data,
    }
}

fn fail(err: Error) -> CmrlStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn fail_json(err: serde_json::Error) -> CmrlStatus {
    set_error(err.to_string());
    CmrlStatus::BadJson
}

/// Runs `f` with panics converted to `CmrlStatus::Panic`.
fn guarded<F: FnOnce() -> CmrlStatus>(f: F) -> CmrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            CmrlStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string valid for the call.
unsafe fn utf8_arg<'a>(s: *const c_char) -> Result<&'a str, CmrlStatus> {
    if s.is_null() {
        set_error("null string argument".into());
        return Err(CmrlStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(s) }.to_str().map_err(|e| {
        set_error(format!("argument is not UTF-8: {e}"));
        CmrlStatus::InvalidUtf8
    })
}

fn parse_task(json: &str) -> Result<TaskConfig, CmrlStatus> {
    serde_json::from_str(json).map_err(|e| fail_json(e))
}

fn require<'a, T>(p: *const T, what: &str) -> Result<&'a T, CmrlStatus> {
    if p.is_null() {
        set_error(format!("null {what} handle"));
        Err(CmrlStatus::NullArgument)
    } else {
        Ok(unsafe { &*p })
    }
}

fn emit<T>(out: *mut *mut T, value: T, what: &str) -> CmrlStatus {
    if out.is_null() {
        set_error(format!("null {what} out-pointer"));
        return CmrlStatus::NullArgument;
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    CmrlStatus::Ok
}

fn emit_string(out: *mut *mut c_char, text: String) -> CmrlStatus {
    if out.is_null() {
        set_error("null string out-pointer".into());
        return CmrlStatus::NullArgument;
    }
    match CString::new(text) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            CmrlStatus::Ok
        }
        Err(e) => {
            set_error(format!("interior NUL in output: {e}"));
            CmrlStatus::Data
        }
    }
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn cmrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message from the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cmrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned through a `char**` out-parameter.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cmrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Rolls `episodes` random-exploration episodes of the task described by
/// `task_json` and returns the dataset.
///
/// # Safety
/// `task_json` must be a NUL-terminated string; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn cmrl_collect(
    task_json: *const c_char,
    episodes: usize,
    seed: u64,
    out: *mut *mut CmrlDataset,
) -> CmrlStatus {
    guarded(|| {
        let json = match unsafe { utf8_arg(task_json) } {
            Ok(s) => s,
            Err(s) => return s,
        };
        let cfg = match parse_task(json) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match collect_random(&cfg, episodes, seed) {
            Ok(d) => emit(out, CmrlDataset { inner: d }, "dataset"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_dataset_load(
    path: *const c_char,
    out: *mut *mut CmrlDataset,
) -> CmrlStatus {
    guarded(|| {
        let p = match unsafe { utf8_arg(path) } {
            Ok(s) => s,
            Err(s) => return s,
        };
        match Dataset::load(Path::new(p)) {
            Ok(d) => emit(out, CmrlDataset { inner: d }, "dataset"),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `d` must be a live dataset handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cmrl_dataset_save(
    d: *const CmrlDataset,
    path: *const c_char,
) -> CmrlStatus {
    guarded(|| {
        let d = match require(d, "dataset") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let p = match unsafe { utf8_arg(path) } {
            Ok(s) => s,
            Err(s) => return s,
        };
        match d.inner.save(Path::new(p)) {
            Ok(()) => CmrlStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Episode count, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cmrl_dataset_episodes(d: *const CmrlDataset) -> usize {
    if d.is_null() {
        0
    } else {
        unsafe { &*d }.inner.episode_count()
    }
}

/// Transitions per episode, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cmrl_dataset_horizon(d: *const CmrlDataset) -> usize {
    if d.is_null() {
        0
    } else {
        unsafe { &*d }.inner.horizon()
    }
}

/// # Safety
/// `d` must be null or an owned dataset handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cmrl_dataset_free(d: *mut CmrlDataset) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// Runs event discovery. `config_json` may be null for default settings.
///
/// # Safety
/// `d` must be a live dataset handle; `config_json` null or NUL-terminated;
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_discover(
    d: *const CmrlDataset,
    config_json: *const c_char,
    out: *mut *mut CmrlGraph,
) -> CmrlStatus {
    guarded(|| {
        let d = match require(d, "dataset") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let cfg: DiscoveryConfig = if config_json.is_null() {
            DiscoveryConfig::default()
        } else {
            let json = match unsafe { utf8_arg(config_json) } {
                Ok(s) => s,
                Err(s) => return s,
            };
            match serde_json::from_str(json) {
                Ok(c) => c,
                Err(e) => return fail_json(e),
            }
        };
        match discover(&d.inner, &cfg) {
            Ok((graph, report)) => emit(out, CmrlGraph { graph, report }, "graph"),
            Err(e) => fail(e),
        }
    })
}

/// Number of accepted memory units, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn cmrl_graph_unit_count(g: *const CmrlGraph) -> usize {
    if g.is_null() {
        0
    } else {
        unsafe { &*g }.graph.units.len()
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    graph: CausalGraph,
    report: DiscoveryReport,
}

/// Serializes the graph and its discovery report to JSON. The returned
/// string must be released with `cmrl_string_free`.
///
/// # Safety
/// `g` must be a live graph handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_graph_to_json(
    g: *const CmrlGraph,
    out: *mut *mut c_char,
) -> CmrlStatus {
    guarded(|| {
        let g = match require(g, "graph") {
            Ok(g) => g,
            Err(s) => return s,
        };
        let doc = GraphJson {
            graph: g.graph.clone(),
            report: g.report.clone(),
        };
        match serde_json::to_string_pretty(&doc) {
            Ok(s) => emit_string(out, s),
            Err(e) => fail_json(e),
        }
    })
}

/// Rebuilds a graph handle from `cmrl_graph_to_json` output.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_graph_from_json(
    json: *const c_char,
    out: *mut *mut CmrlGraph,
) -> CmrlStatus {
    guarded(|| {
        let s = match unsafe { utf8_arg(json) } {
            Ok(s) => s,
            Err(s) => return s,
        };
        match serde_json::from_str::<GraphJson>(s) {
            Ok(doc) => emit(
                out,
                CmrlGraph {
                    graph: doc.graph,
                    report: doc.report,
                },
                "graph",
            ),
            Err(e) => fail_json(e),
        }
    })
}

/// # Safety
/// `g` must be null or an owned graph handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cmrl_graph_free(g: *mut CmrlGraph) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

/// Augments the dataset with the graph's memory units (null graph plans on
/// raw observations), fits the tabular model, and solves it by value
/// iteration.
///
/// # Safety
/// `d` must be a live dataset handle; `g` null or a live graph handle;
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_plan(
    d: *const CmrlDataset,
    g: *const CmrlGraph,
    gamma: f64,
    tol: f64,
    out: *mut *mut CmrlPolicy,
) -> CmrlStatus {
    guarded(|| {
        let d = match require(d, "dataset") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let units: Vec<MemoryUnit> = if g.is_null() {
            Vec::new()
        } else {
            unsafe { &*g }.graph.units.clone()
        };
        let plan = (|| {
            let aug = if units.is_empty() {
                d.inner.clone()
            } else {
                augment_dataset(&d.inner, &units)?
            };
            let idx = AugmentedStateIndex::new(&aug.schema, units.len())?;
            let mdl = fit_model(&aug, &idx)?;
            value_iteration(&mdl, gamma, tol)
        })();
        match plan {
            Ok((vt, pt)) => emit(
                out,
                CmrlPolicy {
                    table: pt,
                    units,
                    gamma,
                    sweeps: vt.sweeps,
                    residual: vt.residual,
                },
                "policy",
            ),
            Err(e) => fail(e),
        }
    })
}

#[derive(Serialize)]
struct PolicyJson<'a> {
    gamma: f64,
    sweeps: usize,
    residual: f64,
    units: &'a [MemoryUnit],
    table: &'a PolicyTable,
}

/// Serializes the policy, its memory units, and solver stats to JSON. The
/// returned string must be released with `cmrl_string_free`.
///
/// # Safety
/// `p` must be a live policy handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_policy_to_json(
    p: *const CmrlPolicy,
    out: *mut *mut c_char,
) -> CmrlStatus {
    guarded(|| {
        let p = match require(p, "policy") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let doc = PolicyJson {
            gamma: p.gamma,
            sweeps: p.sweeps,
            residual: p.residual,
            units: &p.units,
            table: &p.table,
        };
        match serde_json::to_string_pretty(&doc) {
            Ok(s) => emit_string(out, s),
            Err(e) => fail_json(e),
        }
    })
}

/// Rolls fresh episodes of the task in `task_json` under the policy, with
/// the policy's own memory units tracking events online. Writes the mean
/// per-episode reward and the success rate; either out-pointer may be null
/// to skip that statistic.
///
/// # Safety
/// `p` must be a live policy handle; `task_json` a NUL-terminated string;
/// `mean_reward`/`success_rate` null or valid.
#[no_mangle]
pub unsafe extern "C" fn cmrl_evaluate(
    p: *const CmrlPolicy,
    task_json: *const c_char,
    episodes: usize,
    mean_reward: *mut f64,
    success_rate: *mut f64,
) -> CmrlStatus {
    guarded(|| {
        let p = match require(p, "policy") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let json = match unsafe { utf8_arg(task_json) } {
            Ok(s) => s,
            Err(s) => return s,
        };
        let cfg = match parse_task(json) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match evaluate_policy(&cfg, &p.table, &p.units, episodes) {
            Ok(summary) => {
                if !mean_reward.is_null() {
                    unsafe { *mean_reward = summary.mean_reward };
                }
                if !success_rate.is_null() {
                    unsafe { *success_rate = summary.success_rate };
                }
                CmrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `p` must be null or an owned policy handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cmrl_policy_free(p: *mut CmrlPolicy) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn tiny_tire() -> CString {
        CString::new(
            r#"{"kind":"tire","dims":[3,3],"lugs":[[0,0],[0,2],[2,0],[2,2]],
                "center":[1,1],"horizon":40,"terminal_on_success":true,"seed":7}"#,
        )
        .unwrap()
    }

    #[test]
    fn full_pipeline_round_trips_through_the_c_surface() {
        let task = tiny_tire();
        let mut d: *mut CmrlDataset = ptr::null_mut();
        let st = unsafe { cmrl_collect(task.as_ptr(), 60, 7, &mut d) };
        assert_eq!(st, CmrlStatus::Ok);
        assert_eq!(unsafe { cmrl_dataset_episodes(d) }, 60);
        assert_eq!(unsafe { cmrl_dataset_horizon(d) }, 40);

        let mut g: *mut CmrlGraph = ptr::null_mut();
        let st = unsafe { cmrl_discover(d, ptr::null(), &mut g) };
        assert_eq!(st, CmrlStatus::Ok);

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { cmrl_graph_to_json(g, &mut json) }, CmrlStatus::Ok);
        let mut g2: *mut CmrlGraph = ptr::null_mut();
        assert_eq!(unsafe { cmrl_graph_from_json(json, &mut g2) }, CmrlStatus::Ok);
        assert_eq!(
            unsafe { cmrl_graph_unit_count(g) },
            unsafe { cmrl_graph_unit_count(g2) }
        );
        unsafe { cmrl_string_free(json) };

        let mut p: *mut CmrlPolicy = ptr::null_mut();
        let st = unsafe { cmrl_plan(d, g, 0.99, 1e-8, &mut p) };
        assert_eq!(st, CmrlStatus::Ok);

        let (mut reward, mut success) = (f64::NAN, f64::NAN);
        let st = unsafe { cmrl_evaluate(p, task.as_ptr(), 50, &mut reward, &mut success) };
        assert_eq!(st, CmrlStatus::Ok);
        assert!(reward.is_finite() && (0.0..=1.0).contains(&success));

        let mut pjson: *mut c_char = ptr::null_mut();
        assert_eq!(unsafe { cmrl_policy_to_json(p, &mut pjson) }, CmrlStatus::Ok);
        let text = unsafe { CStr::from_ptr(pjson) }.to_str().unwrap();
        assert!(text.contains("\"gamma\": 0.99"));
        unsafe { cmrl_string_free(pjson) };

        unsafe {
            cmrl_policy_free(p);
            cmrl_graph_free(g2);
            cmrl_graph_free(g);
            cmrl_dataset_free(d);
        }
    }

    #[test]
    fn dataset_saves_and_loads_through_paths() {
        let task = tiny_tire();
        let dir = std::env::temp_dir().join(format!("cmrl_ffi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = CString::new(dir.join("d.jsonl").to_str().unwrap().to_owned()).unwrap();

        let mut d: *mut CmrlDataset = ptr::null_mut();
        assert_eq!(unsafe { cmrl_collect(task.as_ptr(), 10, 1, &mut d) }, CmrlStatus::Ok);
        assert_eq!(unsafe { cmrl_dataset_save(d, path.as_ptr()) }, CmrlStatus::Ok);

        let mut d2: *mut CmrlDataset = ptr::null_mut();
        assert_eq!(unsafe { cmrl_dataset_load(path.as_ptr(), &mut d2) }, CmrlStatus::Ok);
        assert_eq!(unsafe { cmrl_dataset_episodes(d2) }, 10);
        assert_eq!(unsafe { &(*d).inner.episodes }, unsafe {
            &(*d2).inner.episodes
        });

        unsafe {
            cmrl_dataset_free(d2);
            cmrl_dataset_free(d);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn null_and_malformed_arguments_report_status_and_message() {
        let mut d: *mut CmrlDataset = ptr::null_mut();
        assert_eq!(
            unsafe { cmrl_collect(ptr::null(), 5, 0, &mut d) },
            CmrlStatus::NullArgument
        );
        assert!(!cmrl_last_error().is_null());

        let bad = CString::new("{not json").unwrap();
        assert_eq!(
            unsafe { cmrl_collect(bad.as_ptr(), 5, 0, &mut d) },
            CmrlStatus::BadJson
        );

        let task = tiny_tire();
        assert_eq!(
            unsafe { cmrl_collect(task.as_ptr(), 0, 0, &mut d) },
            CmrlStatus::Config
        );
        let msg = unsafe { CStr::from_ptr(cmrl_last_error()) }.to_str().unwrap();
        assert!(msg.contains("episode"));

        let mut g: *mut CmrlGraph = ptr::null_mut();
        assert_eq!(
            unsafe { cmrl_discover(ptr::null(), ptr::null(), &mut g) },
            CmrlStatus::NullArgument
        );

        let missing = CString::new("/nonexistent/cmrl/d.jsonl").unwrap();
        assert_eq!(
            unsafe { cmrl_dataset_load(missing.as_ptr(), &mut d) },
            CmrlStatus::Io
        );
    }

    #[test]
    fn null_frees_and_null_accessors_are_no_ops() {
        unsafe {
            cmrl_dataset_free(ptr::null_mut());
            cmrl_graph_free(ptr::null_mut());
            cmrl_policy_free(ptr::null_mut());
            cmrl_string_free(ptr::null_mut());
        }
        assert_eq!(unsafe { cmrl_dataset_episodes(ptr::null()) }, 0);
        assert_eq!(unsafe { cmrl_graph_unit_count(ptr::null()) }, 0);
        let v = unsafe { CStr::from_ptr(cmrl_version()) }.to_str().unwrap();
        assert!(!v.is_empty());
    }

    #[test]
    fn markov_plan_accepts_a_null_graph() {
        let task = tiny_tire();
        let mut d: *mut CmrlDataset = ptr::null_mut();
        assert_eq!(unsafe { cmrl_collect(task.as_ptr(), 40, 3, &mut d) }, CmrlStatus::Ok);
        let mut p: *mut CmrlPolicy = ptr::null_mut();
        assert_eq!(
            unsafe { cmrl_plan(d, ptr::null(), 0.9, 1e-6, &mut p) },
            CmrlStatus::Ok
        );
        let st = unsafe { cmrl_evaluate(p, task.as_ptr(), 20, ptr::null_mut(), ptr::null_mut()) };
        assert_eq!(st, CmrlStatus::Ok);
        unsafe {
            cmrl_policy_free(p);
            cmrl_dataset_free(d);
        }
    }
}
