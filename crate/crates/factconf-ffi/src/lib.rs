//! C interface to factconf.
//!
//! Panels and estimates cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns an [`FcStatus`];
//! on failure the message is available from [`fc_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use factconf::estimators::{estimate, EffectEstimate, EffectMode, EstimatorConfig, Learner, Method};
use factconf::panel::{load_panel_dir, NeighborhoodSpec, PanelData, Schema};
use factconf::sim::{generate, SimScenario};
use factconf::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad configuration or argument values.
    InvalidArgument = 2,
    /// Unreadable or malformed input data.
    InvalidData = 3,
    /// The numerical pipeline failed (singular system, failed bootstrap, ...).
    Numerical = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcMethod {
    Fc = 0,
    FcPlusDml = 1,
    Ife = 2,
    IfePlusDml = 3,
    SingleDml = 4,
    MultiDml = 5,
    StackedDml = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcLearner {
    Linear = 0,
    /// `learner_param` is the ridge penalty.
    Ridge = 1,
    /// `learner_param` is the number of spline columns per feature.
    Spline = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcConfig {
    pub method: FcMethod,
    pub rank: usize,
    pub learner: FcLearner,
    pub learner_param: f64,
    pub folds: usize,
    /// Random restarts of the rotation search.
    pub n_init: usize,
    /// 0 skips the bootstrap.
    pub bootstrap_reps: usize,
    pub seed: u64,
    /// Per-unit dose-response curves instead of one pooled slope.
    pub per_unit: bool,
}

/// Opaque panel handle.
pub struct FcPanel {
    panel: PanelData,
    neighborhoods: Option<NeighborhoodSpec>,
}

/// Opaque estimate handle.
pub struct FcEstimate {
    estimate: EffectEstimate,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> FcStatus {
    match err {
        e if e.is_numerical() => FcStatus::Numerical,
        Error::Io { .. }
        | Error::Csv { .. }
        | Error::MissingCell { .. }
        | Error::DuplicateCell { .. }
        | Error::NonNumericValue { .. }
        | Error::NonFinite { .. }
        | Error::InsufficientReplicates { .. } => FcStatus::InvalidData,
        _ => FcStatus::InvalidArgument,
    }
}

/// Runs `body`, turning errors and panics into a status plus a stored message.
fn guard(body: impl FnOnce() -> Result<(), (FcStatus, String)>) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {message}"));
            FcStatus::Internal
        }
    }
}

fn lib_err(err: Error) -> (FcStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (FcStatus, String) {
    (FcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (FcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), (FcStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn fc_config_default() -> FcConfig {
    let d = EstimatorConfig::default();
    FcConfig {
        method: FcMethod::Fc,
        rank: 1,
        learner: FcLearner::Spline,
        learner_param: 5.0,
        folds: d.folds,
        n_init: d.n_init,
        bootstrap_reps: 0,
        seed: 0,
        per_unit: false,
    }
}

fn to_config(c: &FcConfig) -> Result<EstimatorConfig, (FcStatus, String)> {
    let method = match c.method {
        FcMethod::Fc => Method::FC,
        FcMethod::FcPlusDml => Method::FCplusDML,
        FcMethod::Ife => Method::IFE,
        FcMethod::IfePlusDml => Method::IFEplusDML,
        FcMethod::SingleDml => Method::SingleDML,
        FcMethod::MultiDml => Method::MultiDML,
        FcMethod::StackedDml => Method::StackedDML,
    };
    let learner = match c.learner {
        FcLearner::Linear => Learner::Linear,
        FcLearner::Ridge if c.learner_param >= 0.0 => Learner::Ridge(c.learner_param),
        FcLearner::Spline if c.learner_param >= 1.0 && c.learner_param.fract() == 0.0 => {
            Learner::SplineAdditive(c.learner_param as usize)
        }
        _ => return Err((FcStatus::InvalidArgument, format!("bad learner parameter {}", c.learner_param))),
    };
    Ok(EstimatorConfig {
        method,
        rank: c.rank,
        learner,
        folds: c.folds,
        n_init: c.n_init,
        bootstrap_reps: c.bootstrap_reps,
        seed: c.seed,
        effect_mode: if c.per_unit { EffectMode::PerUnit } else { EffectMode::Pooled },
        ..EstimatorConfig::default()
    })
}

/// Builds a panel from row-major `n_units x n_times` arrays. `covariates` holds
/// `n_covariates` such blocks back to back and may be NULL when `n_covariates` is 0.
///
/// # Safety
/// Every non-null array must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_panel_new(
    n_units: usize,
    n_times: usize,
    exposures: *const f64,
    outcomes: *const f64,
    n_covariates: usize,
    covariates: *const f64,
    out: *mut *mut FcPanel,
) -> FcStatus {
    guard(|| {
        if exposures.is_null() || outcomes.is_null() || (n_covariates > 0 && covariates.is_null()) {
            return Err(null("data array"));
        }
        let cells =
            n_units.checked_mul(n_times).ok_or_else(|| (FcStatus::InvalidArgument, "panel too large".into()))?;
        let block = |p: *const f64| DMatrix::from_row_slice(n_units, n_times, std::slice::from_raw_parts(p, cells));
        let xs = (0..n_covariates).map(|k| block(covariates.add(k * cells))).collect();
        let panel =
            PanelData::new(block(exposures), block(outcomes), xs, DMatrix::zeros(n_units, 0)).map_err(lib_err)?;
        write_out(out, FcPanel { panel, neighborhoods: None })
    })
}

/// Loads `exposure.csv`, `outcome.csv` and the optional covariate and coordinate files from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fc_panel_load(dir: *const c_char, out: *mut *mut FcPanel) -> FcStatus {
    guard(|| {
        let dir = read_str(dir, "dir")?;
        let panel = load_panel_dir(Path::new(dir), &Schema::default()).map_err(lib_err)?;
        write_out(out, FcPanel { panel, neighborhoods: None })
    })
}

/// Draws one data set from a named simulation scenario, neighborhoods included.
///
/// # Safety
/// `scenario` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fc_panel_simulate(scenario: *const c_char, seed: u64, out: *mut *mut FcPanel) -> FcStatus {
    guard(|| {
        let name = read_str(scenario, "scenario")?;
        let scenario = SimScenario::from_name(name, seed).map_err(lib_err)?;
        let draw = generate(&scenario, seed).map_err(lib_err)?;
        write_out(out, FcPanel { panel: draw.panel, neighborhoods: draw.neighborhoods })
    })
}

/// Sets each unit's neighborhood to itself plus its `k` nearest units; `k = 0` clears it.
///
/// # Safety
/// `panel` must come from an `fc_panel_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn fc_panel_set_knn(panel: *mut FcPanel, k: usize) -> FcStatus {
    guard(|| {
        let p = panel.as_mut().ok_or_else(|| null("panel"))?;
        p.neighborhoods =
            if k == 0 { None } else { Some(NeighborhoodSpec::k_nearest(&p.panel.coords, k).map_err(lib_err)?) };
        Ok(())
    })
}

/// # Safety
/// `panel` must come from an `fc_panel_*` constructor; the outputs may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fc_panel_dims(panel: *const FcPanel, n_units: *mut usize, n_times: *mut usize) -> FcStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| null("panel"))?;
        if let Some(n) = n_units.as_mut() {
            *n = p.panel.n_units();
        }
        if let Some(t) = n_times.as_mut() {
            *t = p.panel.n_times();
        }
        Ok(())
    })
}

/// # Safety
/// `panel` must come from an `fc_panel_*` constructor and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fc_panel_free(panel: *mut FcPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Fits the configured estimator, with bootstrap intervals when `bootstrap_reps > 0`.
///
/// # Safety
/// `panel` must be a live panel handle and `config` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fc_estimate(
    panel: *const FcPanel,
    config: *const FcConfig,
    out: *mut *mut FcEstimate,
) -> FcStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| null("panel"))?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let mut cfg = to_config(c)?;
        cfg.neighborhoods = p.neighborhoods.clone();
        let est = estimate(&p.panel, &cfg).map_err(lib_err)?;
        let json = serde_json::to_string(&est).map_err(|e| lib_err(e.into()))?;
        let json = CString::new(json).map_err(|e| (FcStatus::Internal, e.to_string()))?;
        write_out(out, FcEstimate { estimate: est, json })
    })
}

/// Number of pooled slopes: 1, or 2 (direct, spillover) under interference.
///
/// # Safety
/// `est` must be a live estimate handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn fc_estimate_n_beta(est: *const FcEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.estimate.beta.len())
}

/// # Safety
/// `est` must be a live estimate handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fc_estimate_beta(est: *const FcEstimate, index: usize, value: *mut f64) -> FcStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        let v = value.as_mut().ok_or_else(|| null("value"))?;
        *v = *e.estimate.beta.get(index).ok_or_else(|| {
            (FcStatus::InvalidArgument, format!("slope index {index} out of range ({} slopes)", e.estimate.beta.len()))
        })?;
        Ok(())
    })
}

/// Average causal derivative.
///
/// # Safety
/// `est` must be a live estimate handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fc_estimate_acd(est: *const FcEstimate, value: *mut f64) -> FcStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        *value.as_mut().ok_or_else(|| null("value"))? = e.estimate.acd;
        Ok(())
    })
}

/// Bootstrap interval of a named summary such as `beta.direct` or `acd`.
///
/// # Safety
/// `est` must be a live estimate handle, `name` NUL-terminated, `lo` and `hi` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fc_estimate_interval(
    est: *const FcEstimate,
    name: *const c_char,
    lo: *mut f64,
    hi: *mut f64,
) -> FcStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        let key = read_str(name, "name")?;
        let iv = e
            .estimate
            .intervals
            .get(key)
            .ok_or_else(|| (FcStatus::InvalidArgument, format!("no interval named {key:?}")))?;
        *lo.as_mut().ok_or_else(|| null("lo"))? = iv.lo;
        *hi.as_mut().ok_or_else(|| null("hi"))? = iv.hi;
        Ok(())
    })
}

/// Full estimate as compact JSON. The string lives as long as the handle.
///
/// # Safety
/// `est` must be a live estimate handle or NULL (which yields NULL).
#[no_mangle]
pub unsafe extern "C" fn fc_estimate_json(est: *const FcEstimate) -> *const c_char {
    est.as_ref().map_or(ptr::null(), |e| e.json.as_ptr())
}

/// # Safety
/// `est` must come from `fc_estimate` and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fc_estimate_free(est: *mut FcEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}
