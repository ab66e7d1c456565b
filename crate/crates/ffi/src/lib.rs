//! C ABI over the buyback library.
//!
//! A `BbModel` bundles a validated run configuration with policy parameters.
//! Every function returns a `BbStatus`; on failure the message is available
//! from `bb_last_error_message` on the same thread until the next call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use buyback::autodiff::checkpoint::Checkpoint;
use buyback::autodiff::ParamStore;
use buyback::config::RunConfig;
use buyback::market::{simulate_paths, MarketState};
use buyback::policy::{NetPolicy, Policy};
use buyback::training::{evaluate, train_from, EvalMode, Silent};
use buyback::Error;

/// Result of every call. Values above zero match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbStatus {
    Ok = 0,
    /// I/O or other failure.
    Failure = 1,
    /// Invalid configuration or argument.
    Config = 2,
    /// Checkpoint and configuration do not belong together.
    Mismatch = 3,
    /// Non-finite value or domain error.
    Numerical = 4,
    /// A required pointer was null or a buffer too small.
    InvalidArgument = 5,
    /// Internal panic; the handle must not be used further.
    Panic = 6,
}

/// Opaque model handle.
pub struct BbModel {
    config: RunConfig,
    params: ParamStore,
}

/// Contract state on a given day.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BbState {
    pub day: usize,
    pub price: f64,
    pub average: f64,
    pub cash: f64,
    pub inventory: f64,
}

/// Relaxed-stopping evaluation summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BbReport {
    pub mean: f64,
    pub variance: f64,
    pub objective: f64,
    pub objective_normalized: f64,
    pub mean_settlement_day: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BbStatus {
    match e.exit_code() {
        2 => BbStatus::Config,
        3 => BbStatus::Mismatch,
        4 => BbStatus::Numerical,
        _ => BbStatus::Failure,
    }
}

enum Fail {
    Lib(Error),
    Arg(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BbStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg.to_string());
            BbStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            BbStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid nul-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Arg("null path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `p` is null or points to a live model.
unsafe fn model_ref<'a>(p: *const BbModel) -> Result<&'a BbModel, Fail> {
    p.as_ref().ok_or(Fail::Arg("null model"))
}

/// # Safety
/// `p` is null or points to a live model not aliased elsewhere.
unsafe fn model_mut<'a>(p: *mut BbModel) -> Result<&'a mut BbModel, Fail> {
    p.as_mut().ok_or(Fail::Arg("null model"))
}

fn state_of(s: &BbState) -> MarketState {
    MarketState {
        n: s.day,
        s: s.price,
        a: s.average,
        x: s.cash,
        q: s.inventory,
    }
}

/// Loads a TOML run configuration and initializes the policy from its seed.
///
/// # Safety
/// `config_path` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_from_config(config_path: *const c_char, out: *mut *mut BbModel) -> BbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Arg("null output pointer"));
        }
        let config = RunConfig::load(&path_arg(config_path)?)?;
        let params = config.training.initial_params(&config.contract);
        *out = Box::into_raw(Box::new(BbModel { config, params }));
        Ok(())
    })
}

/// Replaces the model's parameters with a checkpoint of the same contract.
///
/// # Safety
/// `model` is a live handle; `path` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bb_model_load_checkpoint(model: *mut BbModel, path: *const c_char) -> BbStatus {
    guard(|| {
        let m = model_mut(model)?;
        let ck = Checkpoint::load(path_arg(path)?).map_err(Error::from)?;
        if ck.params.kind != m.config.contract.kind() {
            return Err(Error::Mismatch(format!(
                "checkpoint holds a {} policy, model is {}",
                ck.params.kind,
                m.config.contract.kind()
            ))
            .into());
        }
        m.params = ck.params;
        Ok(())
    })
}

/// # Safety
/// `model` is a live handle; `path` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bb_model_save_checkpoint(model: *const BbModel, path: *const c_char) -> BbStatus {
    guard(|| {
        let m = model_ref(model)?;
        Checkpoint::new(m.params.clone(), 0)
            .save(path_arg(path)?)
            .map_err(Error::from)?;
        Ok(())
    })
}

/// Trains from the current parameters with the configured schedule. On a
/// numerical abort the last finite parameters are kept.
///
/// # Safety
/// `model` is a live handle; `heldout_normalized` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_train(model: *mut BbModel, heldout_normalized: *mut f64) -> BbStatus {
    guard(|| {
        let m = model_mut(model)?;
        let c = &m.config;
        match train_from(m.params.clone(), &c.contract, &c.market, &c.training, &mut Silent) {
            Ok(out) => {
                m.params = out.params;
                if let (Some(dst), Some(h)) = (heldout_normalized.as_mut(), out.heldout) {
                    *dst = h.j_normalized;
                }
                Ok(())
            }
            Err(abort) => {
                if abort.last_good.kind == c.contract.kind() {
                    m.params = abort.last_good;
                }
                Err(abort.error.into())
            }
        }
    })
}

/// Relaxed evaluation on `paths` fresh trajectories drawn with `seed`.
///
/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_evaluate(
    model: *const BbModel,
    paths: usize,
    seed: u64,
    out: *mut BbReport,
) -> BbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = out.as_mut().ok_or(Fail::Arg("null report pointer"))?;
        if paths == 0 {
            return Err(Fail::Arg("paths must be positive"));
        }
        let c = &m.config;
        let batch = simulate_paths(&c.market, paths, seed)?;
        let r = evaluate(
            &NetPolicy::new(m.params.clone()),
            &c.contract,
            &c.market,
            &batch,
            c.training.gamma,
            EvalMode::Relaxed,
            seed,
        )?;
        *dst = BbReport {
            mean: r.mean,
            variance: r.variance,
            objective: r.j,
            objective_normalized: r.j_normalized,
            mean_settlement_day: r.mean_settlement_day,
        };
        Ok(())
    })
}

/// Purchase rate (shares per day) chosen in `state`.
///
/// # Safety
/// `model` is a live handle; `state` is readable; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_trade_rate(model: *const BbModel, state: *const BbState, out: *mut f64) -> BbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let st = state.as_ref().ok_or(Fail::Arg("null state"))?;
        let dst = out.as_mut().ok_or(Fail::Arg("null output pointer"))?;
        let c = &m.config;
        *dst = NetPolicy::new(m.params.clone()).trade_rate(&state_of(st), &c.contract, &c.market)?;
        Ok(())
    })
}

/// Probability of settling in `state`.
///
/// # Safety
/// `model` is a live handle; `state` is readable; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_stop_probability(
    model: *const BbModel,
    state: *const BbState,
    out: *mut f64,
) -> BbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let st = state.as_ref().ok_or(Fail::Arg("null state"))?;
        let dst = out.as_mut().ok_or(Fail::Arg("null output pointer"))?;
        let c = &m.config;
        *dst = NetPolicy::new(m.params.clone()).stop_probability(&state_of(st), &c.contract, &c.market)?;
        Ok(())
    })
}

/// Days to expiry `N` of the model's market; paths hold `N + 1` prices.
///
/// # Safety
/// `model` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_days(model: *const BbModel, out: *mut usize) -> BbStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or(Fail::Arg("null output pointer"))? = m.config.market.days;
        Ok(())
    })
}

/// Writes `count` simulated paths row-major into `out`, which must hold
/// `count * (N + 1)` doubles.
///
/// # Safety
/// `model` is a live handle; `out` points to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bb_simulate_paths(
    model: *const BbModel,
    count: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> BbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(Fail::Arg("null output buffer"));
        }
        if count == 0 {
            return Err(Fail::Arg("count must be positive"));
        }
        let width = m.config.market.days + 1;
        if count.checked_mul(width).is_none_or(|need| out_len < need) {
            return Err(Fail::Arg("output buffer too small"));
        }
        let batch = simulate_paths(&m.config.market, count, seed)?;
        let dst = std::slice::from_raw_parts_mut(out, count * width);
        for i in 0..count {
            dst[i * width..(i + 1) * width].copy_from_slice(batch.path(i));
        }
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn bb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bb_model_free(model: *mut BbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
