//! C ABI over `infogain_core`.
//!
//! Every fallible function returns an [`IgStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be fetched with [`ig_last_error_message`]. Strings returned by this library
//! are owned by the caller and must be released with [`ig_string_free`].
//! Structured inputs and outputs (trajectories, steps, summaries, tasks) are
//! JSON in the same shape as the record files written by the CLI.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use infogain_core::annotate::info_gain;
use infogain_core::policy::{AgentProfile, ScriptedPolicy};
use infogain_core::reward::{self, Side};
use infogain_core::search::argmax_select;
use infogain_core::summary::{ExtractiveSummarizer, Summarizer, Summary};
use infogain_core::trajectory::{TrajStep, Trajectory};
use infogain_core::world::{exact_success_prob, generate_world, World, WorldSpec};
use infogain_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Schema = 4,
    Parse = 5,
    Backend = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgSide {
    Winner = 0,
    Loser = 1,
}

impl From<IgSide> for Side {
    fn from(s: IgSide) -> Side {
        match s {
            IgSide::Winner => Side::Winner,
            IgSide::Loser => Side::Loser,
        }
    }
}

/// Opaque simulated world.
pub struct IgWorld(World);

/// Opaque scripted agent bound to one world.
pub struct IgPolicy(ScriptedPolicy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(IgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::SchemaViolation { .. } | Error::Json(_) => IgStatus::Schema,
            Error::ParseFailure(_) | Error::NoScoreFound => IgStatus::Parse,
            Error::BackendUnavailable { .. } => IgStatus::Backend,
            Error::Io(_) => IgStatus::Io,
            _ => IgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(IgStatus::Schema, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IgStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(IgStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(IgStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null. Free with
/// [`ig_string_free`].
#[no_mangle]
pub extern "C" fn ig_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ig_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Gain `(m_curr - m_prev) * M / 2`.
///
/// # Safety
/// `out_gain` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_info_gain(m_prev: f64, m_curr: f64, m: usize, out_gain: *mut f64) -> IgStatus {
    guard(|| {
        if m == 0 || !(0.0..=1.0).contains(&m_prev) || !(0.0..=1.0).contains(&m_curr) {
            return Err(Failure(IgStatus::InvalidArgument, "need M >= 1 and accuracies in [0, 1]".into()));
        }
        *out(out_gain, "out_gain")? = info_gain(m_prev, m_curr, m);
        Ok(())
    })
}

/// # Safety
/// `out_reward` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_score_reward(g: f64, g_hat: f64, m: usize, out_reward: *mut f64) -> IgStatus {
    guard(|| {
        if m == 0 {
            return Err(Failure(IgStatus::InvalidArgument, "M must be >= 1".into()));
        }
        *out(out_reward, "out_reward")? = reward::score_reward(g, g_hat, m);
        Ok(())
    })
}

/// # Safety
/// `counterparts` must point to `len` doubles; `out_reward` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_comparison_reward(
    g_hat: f64,
    side: IgSide,
    counterparts: *const f64,
    len: usize,
    out_reward: *mut f64,
) -> IgStatus {
    guard(|| {
        let c = slice(counterparts, len, "counterparts")?;
        *out(out_reward, "out_reward")? = reward::comparison_reward(g_hat, side.into(), c)?;
        Ok(())
    })
}

/// # Safety
/// `out_weight` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_adaptive_weight(g_plus: f64, g_minus: f64, m: usize, out_weight: *mut f64) -> IgStatus {
    guard(|| {
        if m == 0 {
            return Err(Failure(IgStatus::InvalidArgument, "M must be >= 1".into()));
        }
        *out(out_weight, "out_weight")? = reward::adaptive_weight(g_plus, g_minus, m);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ig_combined_reward(r_s: f64, r_c: f64, w: f64) -> f64 {
    reward::combined_reward(r_s, r_c, w)
}

/// Reads the final `Score:` line of a scorer generation, clamped to
/// `[-M/2, M/2]`. `out_clamped` may be null.
///
/// # Safety
/// `generation` must be a NUL-terminated string; `out_score` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_parse_predicted_score(
    generation: *const c_char,
    m: usize,
    out_score: *mut f64,
    out_clamped: *mut bool,
) -> IgStatus {
    guard(|| {
        let (v, clamped) = reward::parse_predicted_score(text(generation, "generation")?, m)?;
        *out(out_score, "out_score")? = v;
        if let Some(c) = out_clamped.as_mut() {
            *c = clamped;
        }
        Ok(())
    })
}

/// Index of the highest score; the first index wins ties and NaN never wins.
///
/// # Safety
/// `scores` must point to `len` doubles; `out_index` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_argmax_select(scores: *const f64, len: usize, out_index: *mut usize) -> IgStatus {
    guard(|| {
        let s = slice(scores, len, "scores")?;
        if s.is_empty() {
            return Err(Failure(IgStatus::InvalidArgument, "no scores".into()));
        }
        *out(out_index, "out_index")? = argmax_select(s);
        Ok(())
    })
}

/// Generates a world with default entity and noise counts.
///
/// # Safety
/// `out_world` must be a valid pointer; the handle is freed with
/// [`ig_world_free`].
#[no_mangle]
pub unsafe extern "C" fn ig_world_generate(
    seed: u64,
    hop_depth: usize,
    branching: usize,
    out_world: *mut *mut IgWorld,
) -> IgStatus {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        let (world, _) = generate_world(&WorldSpec::new(seed, hop_depth, branching))?;
        *slot = Box::into_raw(Box::new(IgWorld(world)));
        Ok(())
    })
}

/// # Safety
/// `bundle` must be a NUL-terminated string; `out_world` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_world_from_bundle(bundle: *const c_char, out_world: *mut *mut IgWorld) -> IgStatus {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        let world = World::from_bundle(text(bundle, "bundle")?)?;
        *slot = Box::into_raw(Box::new(IgWorld(world)));
        Ok(())
    })
}

/// # Safety
/// `world` must be a live handle; `out_bundle` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_world_to_bundle(world: *const IgWorld, out_bundle: *mut *mut c_char) -> IgStatus {
    guard(|| {
        let w = borrow(world, "world")?;
        *out(out_bundle, "out_bundle")? = to_c(w.0.to_bundle());
        Ok(())
    })
}

/// Task record of the world as JSON.
///
/// # Safety
/// `world` must be a live handle; `out_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_world_task_json(world: *const IgWorld, out_json: *mut *mut c_char) -> IgStatus {
    guard(|| {
        let w = borrow(world, "world")?;
        *out(out_json, "out_json")? = to_c(serde_json::to_string(&w.0.task())?);
        Ok(())
    })
}

/// Default step horizon of the world.
///
/// # Safety
/// `world` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ig_world_default_budget(world: *const IgWorld) -> usize {
    world.as_ref().map_or(0, |w| w.0.spec.default_budget())
}

/// # Safety
/// `world` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ig_world_free(world: *mut IgWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Scripted agent for `world`. The policy does not borrow the world.
///
/// # Safety
/// `world` must be a live handle; `out_policy` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_policy_scripted(
    world: *const IgWorld,
    guess_prob: f64,
    out_policy: *mut *mut IgPolicy,
) -> IgStatus {
    guard(|| {
        let w = borrow(world, "world")?;
        let slot = out(out_policy, "out_policy")?;
        if !(0.0..=1.0).contains(&guess_prob) {
            return Err(Failure(IgStatus::InvalidArgument, "guess_prob must lie in [0, 1]".into()));
        }
        let p = ScriptedPolicy::for_world(&w.0, AgentProfile { guess_prob });
        *slot = Box::into_raw(Box::new(IgPolicy(p)));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ig_policy_free(policy: *mut IgPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Exact probability that the agent answers correctly from `prefix_json`
/// (null for the empty prefix) within `budget` total steps (0 for the
/// world's default horizon).
///
/// # Safety
/// Handles must be live; `prefix_json` null or NUL-terminated; `out_prob`
/// valid.
#[no_mangle]
pub unsafe extern "C" fn ig_exact_success_prob(
    world: *const IgWorld,
    policy: *const IgPolicy,
    prefix_json: *const c_char,
    budget: usize,
    out_prob: *mut f64,
) -> IgStatus {
    guard(|| {
        let w = borrow(world, "world")?;
        let p = borrow(policy, "policy")?;
        let prefix = match opt_text(prefix_json, "prefix_json")? {
            Some(s) => serde_json::from_str::<Trajectory>(s)?,
            None => Trajectory::new(w.0.task().task_id),
        };
        let budget = if budget == 0 { w.0.spec.default_budget() } else { budget };
        *out(out_prob, "out_prob")? = exact_success_prob(&w.0, &p.0, &prefix, budget)?;
        Ok(())
    })
}

/// One extractive summary update `h_t` from the query, the previous summary
/// (null for the empty base case), the previous tool response (nullable) and
/// the new step. Summaries and steps are JSON.
///
/// # Safety
/// String arguments must be null where allowed or NUL-terminated;
/// `out_summary_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_summary_update(
    bound: usize,
    query: *const c_char,
    prev_summary_json: *const c_char,
    prev_response: *const c_char,
    step_json: *const c_char,
    out_summary_json: *mut *mut c_char,
) -> IgStatus {
    guard(|| {
        if bound == 0 {
            return Err(Failure(IgStatus::InvalidArgument, "bound must be >= 1".into()));
        }
        let q = text(query, "query")?;
        let prev = match opt_text(prev_summary_json, "prev_summary_json")? {
            Some(s) => serde_json::from_str::<Summary>(s)?,
            None => Summary::empty(),
        };
        let resp = opt_text(prev_response, "prev_response")?;
        let step: TrajStep = serde_json::from_str(text(step_json, "step_json")?)?;
        let slot = out(out_summary_json, "out_summary_json")?;
        let h = ExtractiveSummarizer::new(bound).update(q, &prev, resp, &step)?;
        *slot = to_c(serde_json::to_string(&h)?);
        Ok(())
    })
}
