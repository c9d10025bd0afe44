//! C ABI over the trussloop solver, response parser and prompt renderer.
//!
//! Every function returns a [`TlStatus`]. On failure the message for the
//! calling thread is available from [`tl_last_error_message`]. Handles are
//! opaque and owned by the caller until passed to the matching `_free`.
//! Strings returned through `char **` must be released with
//! [`tl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trussloop::constraints::SolutionScore;
use trussloop::model::benchmarks;
use trussloop::prompt::{render_feedback, render_initial, RenderContext};
use trussloop::{parse_response, score_design, ProblemSpec, TrussDesign};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    UnknownBenchmark = 4,
    ParseFailed = 5,
    /// The score has no analysis: the design was invalid or a mechanism.
    NotAnalysed = 6,
    Prompt = 7,
    Panic = 8,
}

/// Load cases, supports, area table and constraints.
pub struct TlProblem(ProblemSpec);

/// Nodes and members of a candidate truss.
pub struct TlDesign(TrussDesign);

/// An evaluated design.
pub struct TlScore(SolutionScore);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: TlStatus, msg: impl Into<String>) -> TlStatus {
    set_error(msg);
    status
}

/// Run `f` with panics turned into [`TlStatus::Panic`].
fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(TlStatus::Panic, "internal panic"))
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, TlStatus> {
    if p.is_null() {
        return Err(fail(TlStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(TlStatus::InvalidUtf8, e.to_string()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> TlStatus {
    *out = Box::into_raw(Box::new(value));
    TlStatus::Ok
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> TlStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            TlStatus::Ok
        }
        Err(_) => fail(TlStatus::Prompt, "text contains a NUL byte"),
    }
}

macro_rules! non_null {
    ($($p:expr),+) => {
        if $($p.is_null())||+ {
            return fail(TlStatus::NullArgument, "null pointer argument");
        }
    };
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_problem_from_json(
    json: *const c_char,
    out: *mut *mut TlProblem,
) -> TlStatus {
    guard(|| {
        non_null!(out);
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ProblemSpec::from_json(text) {
            Ok(p) => put(out, TlProblem(p)),
            Err(e) => fail(TlStatus::InvalidJson, e.to_string()),
        }
    })
}

/// One of the built-in problems, `task1_v1` through `task2_v3`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_problem_benchmark(
    name: *const c_char,
    out: *mut *mut TlProblem,
) -> TlStatus {
    guard(|| {
        non_null!(out);
        let name = match read_str(name) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match benchmarks::all().into_iter().find(|(n, _)| n == name) {
            Some((_, p)) => put(out, TlProblem(p)),
            None => fail(
                TlStatus::UnknownBenchmark,
                format!("unknown benchmark {name}"),
            ),
        }
    })
}

/// # Safety
/// `problem` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tl_problem_free(problem: *mut TlProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_design_from_json(
    json: *const c_char,
    out: *mut *mut TlDesign,
) -> TlStatus {
    guard(|| {
        non_null!(out);
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match TrussDesign::from_json(text) {
            Ok(d) => put(out, TlDesign(d)),
            Err(e) => fail(TlStatus::InvalidJson, e.to_string()),
        }
    })
}

/// Extract the design from free-form proposer text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_parse_response(
    text: *const c_char,
    out: *mut *mut TlDesign,
) -> TlStatus {
    guard(|| {
        non_null!(out);
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_response(text) {
            Ok(parsed) => put(out, TlDesign(parsed.design)),
            Err(e) => fail(TlStatus::ParseFailed, e.to_string()),
        }
    })
}

/// Number of nodes and members in a design.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_design_counts(
    design: *const TlDesign,
    nodes: *mut usize,
    members: *mut usize,
) -> TlStatus {
    guard(|| {
        non_null!(design, nodes, members);
        let d = &(*design).0;
        *nodes = d.nodes.len();
        *members = d.members.len();
        TlStatus::Ok
    })
}

/// # Safety
/// `design` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tl_design_free(design: *mut TlDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Validate, solve and check a design. Invalid designs and mechanisms still
/// yield a score; their getters report [`TlStatus::NotAnalysed`].
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_evaluate(
    problem: *const TlProblem,
    design: *const TlDesign,
    out: *mut *mut TlScore,
) -> TlStatus {
    guard(|| {
        non_null!(problem, design, out);
        let score = score_design((*design).0.clone(), &(*problem).0, 0);
        put(out, TlScore(score))
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_score_feasible(score: *const TlScore, out: *mut bool) -> TlStatus {
    guard(|| {
        non_null!(score, out);
        *out = (*score).0.report.feasible;
        TlStatus::Ok
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_score_total_mass(score: *const TlScore, out: *mut f64) -> TlStatus {
    guard(|| {
        non_null!(score, out);
        match (*score).0.metrics.total_mass() {
            Some(m) => {
                *out = m;
                TlStatus::Ok
            }
            None => fail(TlStatus::NotAnalysed, "mass unavailable for this design"),
        }
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_score_max_abs_stress(score: *const TlScore, out: *mut f64) -> TlStatus {
    guard(|| {
        non_null!(score, out);
        match (*score).0.metrics.max_abs_stress() {
            Some(s) => {
                *out = s;
                TlStatus::Ok
            }
            None => fail(
                TlStatus::NotAnalysed,
                (*score)
                    .0
                    .metrics
                    .failure
                    .clone()
                    .unwrap_or_else(|| "design was not analysed".into()),
            ),
        }
    })
}

/// Full score as JSON.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_score_to_json(
    score: *const TlScore,
    out: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        non_null!(score, out);
        let json = serde_json::to_string(&(*score).0).expect("score serialises");
        put_string(out, json)
    })
}

/// # Safety
/// `score` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tl_score_free(score: *mut TlScore) {
    if !score.is_null() {
        drop(Box::from_raw(score));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_render_initial_prompt(
    problem: *const TlProblem,
    out: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        non_null!(problem, out);
        match render_initial(&(*problem).0) {
            Ok(text) => put_string(out, text),
            Err(e) => fail(TlStatus::Prompt, e.to_string()),
        }
    })
}

/// Feedback prompt describing `score` as the latest attempt.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_render_feedback_prompt(
    problem: *const TlProblem,
    score: *const TlScore,
    out: *mut *mut c_char,
) -> TlStatus {
    guard(|| {
        non_null!(problem, score, out);
        let mut ctx = RenderContext::new(&(*problem).0);
        ctx.latest = Some(&(*score).0);
        match render_feedback(&ctx) {
            Ok(text) => put_string(out, text),
            Err(e) => fail(TlStatus::Prompt, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
