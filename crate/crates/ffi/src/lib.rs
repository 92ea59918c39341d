//! C ABI over the navbench core.
//!
//! Every fallible function returns an [`NbStatus`] and writes results through
//! out-pointers. On failure a message is kept per thread and can be fetched
//! with [`nb_last_error`]. Strings handed out by this library are owned by the
//! caller and must be released with [`nb_string_free`]; handles are released
//! with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use libc::c_char;
use navbench::action::{parse_action, render_action};
use navbench::env::action_key;
use navbench::evaluator::task_satisfaction;
use navbench::model::{load_screen, UIScreen};
use navbench::observation::{serialize_full, serialize_simplified};
use navbench::runner::build_report;
use navbench::suite::{lint, load_suite, parse_trajectory, Suite};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Input text or document did not parse.
    ParseError = 3,
    /// A file or directory could not be loaded.
    LoadError = 4,
    NotFound = 5,
    InvalidArgument = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// Text observation modes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NbTextMode {
    A11yFull = 0,
    A11ySimplified = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NbSatisfaction {
    pub satisfied: u32,
    pub total: u32,
    pub pass: bool,
}

/// Opaque parsed UI screen.
pub struct NbScreen(Arc<UIScreen>);

/// Opaque loaded benchmark suite.
pub struct NbSuite(Suite);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(NbStatus, String);

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', "\\0")).expect("NULs were escaped");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NbStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NbStatus::Panic
        }
    }
}

/// # Safety
/// `p` is NULL or a NUL-terminated string valid for the call.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(NbStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is NULL or a pointer obtained from this library and not yet freed.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(NbStatus::NullArgument, format!("{what} is NULL")))
}

/// # Safety
/// `out` is NULL or valid for one write.
unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(NbStatus::NullArgument, "output pointer is NULL".into()));
    }
    out.write(value);
    Ok(())
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', "\\0"))
        .expect("NULs were escaped")
        .into_raw()
}

/// Library version; a static string that must not be freed.
#[no_mangle]
pub extern "C" fn nb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Free the result
/// with `nb_string_free`.
#[no_mangle]
pub extern "C" fn nb_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(std::ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// # Safety
/// `s` is NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Screens

/// Parse a screen document.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_screen_from_json(json: *const c_char, out: *mut *mut NbScreen) -> NbStatus {
    guard(|| {
        let json = text(json, "json")?;
        let screen = load_screen(json.as_bytes()).map_err(|e| Fail(NbStatus::ParseError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(NbScreen(Arc::new(screen)))))
    })
}

/// # Safety
/// `screen` is NULL or a handle from `nb_screen_from_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nb_screen_free(screen: *mut NbScreen) {
    if !screen.is_null() {
        drop(Box::from_raw(screen));
    }
}

/// Text observation of a screen.
///
/// # Safety
/// `screen` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_screen_observation(
    screen: *const NbScreen,
    mode: NbTextMode,
    out: *mut *mut c_char,
) -> NbStatus {
    guard(|| {
        let s = &handle(screen, "screen")?.0;
        let body = match mode {
            NbTextMode::A11yFull => serialize_full(s),
            NbTextMode::A11ySimplified => serialize_simplified(s),
        };
        put(out, owned(body))
    })
}

/// # Safety
/// `screen` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_screen_interactable_count(screen: *const NbScreen, out: *mut usize) -> NbStatus {
    guard(|| put(out, handle(screen, "screen")?.0.interactables().len()))
}

/// Structural fingerprint (64 hex characters).
///
/// # Safety
/// `screen` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_screen_fingerprint(screen: *const NbScreen, out: *mut *mut c_char) -> NbStatus {
    guard(|| put(out, owned(handle(screen, "screen")?.0.fingerprint())))
}

/// Index of the innermost interactable element at `(x, y)`, or -1.
///
/// # Safety
/// `screen` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_screen_hit_test(screen: *const NbScreen, x: i64, y: i64, out: *mut i64) -> NbStatus {
    guard(|| {
        let hit = handle(screen, "screen")?.0.hit_test(x, y);
        put(out, hit.map_or(-1, |e| e.index as i64))
    })
}

// ---------------------------------------------------------------------------
// Actions

/// Canonical rendering of an action line. A malformed line yields
/// `ParseError` and a message starting with the failure reason.
///
/// # Safety
/// `line` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_action_canonical(line: *const c_char, out: *mut *mut c_char) -> NbStatus {
    guard(|| {
        let a = parse_action(text(line, "line")?)
            .map_err(|f| Fail(NbStatus::ParseError, format!("{}: {:?}", f.reason.as_str(), f.raw)))?;
        put(out, owned(render_action(&a)))
    })
}

/// Replay key of an action performed on a screen.
///
/// # Safety
/// `screen` is a live handle; `line` is a NUL-terminated string; `out` is
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_action_key(
    screen: *const NbScreen,
    line: *const c_char,
    out: *mut *mut c_char,
) -> NbStatus {
    guard(|| {
        let s = &handle(screen, "screen")?.0;
        let a = parse_action(text(line, "line")?)
            .map_err(|f| Fail(NbStatus::ParseError, format!("{}: {:?}", f.reason.as_str(), f.raw)))?;
        put(out, owned(action_key(&a, s)))
    })
}

// ---------------------------------------------------------------------------
// Suites

/// Load a suite directory.
///
/// # Safety
/// `root` is a NUL-terminated path; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_load(root: *const c_char, out: *mut *mut NbSuite) -> NbStatus {
    guard(|| {
        let suite = load_suite(text(root, "root")?).map_err(|e| Fail(NbStatus::LoadError, e.to_string()))?;
        put(out, Box::into_raw(Box::new(NbSuite(suite))))
    })
}

/// # Safety
/// `suite` is NULL or a handle from `nb_suite_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_free(suite: *mut NbSuite) {
    if !suite.is_null() {
        drop(Box::from_raw(suite));
    }
}

/// # Safety
/// `suite` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_task_count(suite: *const NbSuite, out: *mut usize) -> NbStatus {
    guard(|| put(out, handle(suite, "suite")?.0.tasks.len()))
}

/// Id of the task at `index`.
///
/// # Safety
/// `suite` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_task_id(suite: *const NbSuite, index: usize, out: *mut *mut c_char) -> NbStatus {
    guard(|| {
        let s = &handle(suite, "suite")?.0;
        let t = s
            .tasks
            .get(index)
            .ok_or_else(|| Fail(NbStatus::NotFound, format!("no task at index {index}")))?;
        put(out, owned(t.task.id.clone()))
    })
}

/// Judge a stored trajectory (JSON lines text) against a task's evaluators.
///
/// # Safety
/// `suite` is a live handle; `task_id` and `trajectory` are NUL-terminated
/// strings; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_check_trajectory(
    suite: *const NbSuite,
    task_id: *const c_char,
    trajectory: *const c_char,
    out: *mut NbSatisfaction,
) -> NbStatus {
    guard(|| {
        let s = &handle(suite, "suite")?.0;
        let id = text(task_id, "task_id")?;
        let lt = s
            .task(id)
            .ok_or_else(|| Fail(NbStatus::NotFound, format!("unknown task {id:?}")))?;
        let t = parse_trajectory(text(trajectory, "trajectory")?, Path::new("<trajectory>"), &s.screens)
            .map_err(|e| Fail(NbStatus::ParseError, e.to_string()))?;
        let sat = task_satisfaction(&lt.evaluators, &t);
        put(
            out,
            NbSatisfaction {
                satisfied: sat.satisfied as u32,
                total: sat.total as u32,
                pass: sat.pass,
            },
        )
    })
}

/// Score a run directory and return the report as JSON. Nothing is written.
///
/// # Safety
/// `suite` is a live handle; `run_dir` is a NUL-terminated path; `out` is
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_score_run(
    suite: *const NbSuite,
    run_dir: *const c_char,
    out: *mut *mut c_char,
) -> NbStatus {
    guard(|| {
        let s = &handle(suite, "suite")?.0;
        let report = build_report(s, Path::new(text(run_dir, "run_dir")?))
            .map_err(|e| Fail(NbStatus::LoadError, e.to_string()))?;
        put(out, owned(report.to_json()))
    })
}

/// Suite lints, one `subject: message` per line; empty when clean.
///
/// # Safety
/// `suite` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nb_suite_lint(suite: *const NbSuite, out: *mut *mut c_char) -> NbStatus {
    guard(|| {
        let lints = lint(&handle(suite, "suite")?.0);
        let body: Vec<String> = lints.iter().map(|l| format!("{}: {}", l.subject, l.message)).collect();
        put(out, owned(body.join("\n")))
    })
}
