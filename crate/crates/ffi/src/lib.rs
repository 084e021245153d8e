//! C ABI over `hrm-core`.
//!
//! Every fallible function returns an [`HrmStatus`]; on failure the message is
//! kept per thread and can be read with [`hrm_last_error`]. Handles are opaque
//! and must be released with the matching `*_free` function. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hrm_core::baselines::{fit_erm, BaselineConfig};
use hrm_core::data::{derive_seed, generate_selection_bias, Dataset, SelectionBiasConfig};
use hrm_core::error::HrmError;
use hrm_core::gates::{hard_mask, GateVector, LinearModel};
use hrm_core::hrm::{run_hrm, HrmConfig};
use hrm_core::metrics::compute_metrics;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrmStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Training = 3,
    Data = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque dataset handle.
pub struct HrmDataset {
    inner: Dataset,
}

/// Opaque trained-model handle.
pub struct HrmModel {
    model: LinearModel,
    gate: Option<GateVector>,
}

impl HrmModel {
    fn predictor(&self) -> LinearModel {
        match &self.gate {
            Some(g) => self.model.masked(&hard_mask(g)),
            None => self.model.clone(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &HrmError) -> HrmStatus {
    match e.root() {
        HrmError::Training { .. } => HrmStatus::Training,
        HrmError::Config(_) | HrmError::Toml(_) | HrmError::Json(_) => HrmStatus::Config,
        HrmError::Io(_) => HrmStatus::Io,
        _ => HrmStatus::Data,
    }
}

enum Failure {
    Null(&'static str),
    Hrm(HrmError),
}

impl From<HrmError> for Failure {
    fn from(e: HrmError) -> Self {
        Failure::Hrm(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HrmStatus::NullPointer
        }
        Ok(Err(Failure::Hrm(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HrmStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a, T>(
    p: *mut T,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn hrm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies a row-major `n x d` design, `n` targets and optional `n` environment
/// labels (`env` may be null).
///
/// # Safety
/// `x` must point to `n*d` doubles, `y` to `n` doubles and `env`, when
/// non-null, to `n` labels.
#[no_mangle]
pub unsafe extern "C" fn hrm_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    env: *const usize,
    out: *mut *mut HrmDataset,
) -> HrmStatus {
    guard(|| {
        let xs = unsafe { slice(x, n * d, "x") }?;
        let ys = unsafe { slice(y, n, "y") }?;
        let mut ds = Dataset::new(
            DMatrix::from_row_slice(n, d, xs),
            DVector::from_column_slice(ys),
        )?;
        if !env.is_null() {
            ds.env_labels = Some(unsafe { slice(env, n, "env") }?.to_vec());
        }
        write_out(out, HrmDataset { inner: ds })
    })
}

/// Pooled selection-bias training set with default settings and bias strength `r`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn hrm_dataset_generate_selection_bias(
    r: f64,
    seed: u64,
    out: *mut *mut HrmDataset,
) -> HrmStatus {
    guard(|| {
        let cfg = SelectionBiasConfig {
            r,
            ..SelectionBiasConfig::default()
        };
        let ds = generate_selection_bias(&cfg, seed)?;
        write_out(out, HrmDataset { inner: ds })
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `n` and `d` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrm_dataset_shape(
    ds: *const HrmDataset,
    n: *mut usize,
    d: *mut usize,
) -> HrmStatus {
    guard(|| {
        let ds = unsafe { nonnull(ds, "dataset") }?;
        if n.is_null() || d.is_null() {
            return Err(Failure::Null("shape outputs"));
        }
        unsafe {
            *n = ds.inner.n();
            *d = ds.inner.d();
        }
        Ok(())
    })
}

/// Copies the data into row-major `x` (`n*d`) and `y` (`n`).
///
/// # Safety
/// Buffers must hold at least `n*d` and `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrm_dataset_copy(
    ds: *const HrmDataset,
    x: *mut f64,
    y: *mut f64,
) -> HrmStatus {
    guard(|| {
        let ds = &unsafe { nonnull(ds, "dataset") }?.inner;
        let (n, d) = (ds.n(), ds.d());
        let xs = unsafe { slice_mut(x, n * d, "x") }?;
        let ys = unsafe { slice_mut(y, n, "y") }?;
        for i in 0..n {
            for j in 0..d {
                xs[i * d + j] = ds.x[(i, j)];
            }
            ys[i] = ds.y[i];
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hrm_dataset_free(ds: *mut HrmDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Pooled least squares fitted by gradient descent with default settings.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn hrm_fit_erm(
    ds: *const HrmDataset,
    seed: u64,
    out: *mut *mut HrmModel,
) -> HrmStatus {
    guard(|| {
        let ds = &unsafe { nonnull(ds, "dataset") }?.inner;
        let fit = fit_erm(
            ds,
            &BaselineConfig {
                seed,
                ..BaselineConfig::default()
            },
        )?;
        write_out(
            out,
            HrmModel {
                model: fit.model,
                gate: None,
            },
        )
    })
}

/// Runs the joint clustering and gate-learning loop. `config_json` may be
/// null for defaults or hold a JSON object with any subset of the HRM
/// configuration fields.
///
/// # Safety
/// `ds` must be a live dataset handle, `config_json` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hrm_fit_hrm(
    ds: *const HrmDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut HrmModel,
) -> HrmStatus {
    guard(|| {
        let ds = &unsafe { nonnull(ds, "dataset") }?.inner;
        let mut cfg: HrmConfig = if config_json.is_null() {
            HrmConfig::default()
        } else {
            let text = unsafe { CStr::from_ptr(config_json) }
                .to_str()
                .map_err(|_| HrmError::config("config_json is not UTF-8"))?;
            serde_json::from_str(text).map_err(HrmError::from)?
        };
        cfg.mc.seed = derive_seed(seed, 1);
        cfg.mp.seed = derive_seed(seed, 2);
        let state = run_hrm(ds, &cfg)?;
        write_out(
            out,
            HrmModel {
                model: state.model,
                gate: Some(state.gate),
            },
        )
    })
}

/// # Safety
/// `model` must be a live model handle; `d` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hrm_model_dim(model: *const HrmModel, d: *mut usize) -> HrmStatus {
    guard(|| {
        let m = unsafe { nonnull(model, "model") }?;
        if d.is_null() {
            return Err(Failure::Null("d"));
        }
        unsafe { *d = m.model.theta.len() };
        Ok(())
    })
}

/// Effective coefficients (gates applied) and intercept.
///
/// # Safety
/// `theta` must hold `d` doubles, where `d` equals the model dimension.
#[no_mangle]
pub unsafe extern "C" fn hrm_model_coefficients(
    model: *const HrmModel,
    theta: *mut f64,
    d: usize,
    intercept: *mut f64,
) -> HrmStatus {
    guard(|| {
        let m = unsafe { nonnull(model, "model") }?;
        let p = m.predictor();
        if d != p.theta.len() {
            return Err(HrmError::config(format!(
                "buffer length {d} but model dimension {}",
                p.theta.len()
            ))
            .into());
        }
        if intercept.is_null() {
            return Err(Failure::Null("intercept"));
        }
        unsafe { slice_mut(theta, d, "theta") }?.copy_from_slice(p.theta.as_slice());
        unsafe { *intercept = p.intercept };
        Ok(())
    })
}

/// Deterministic gate values `clip(μ, 0, 1)`; all ones for ungated models.
///
/// # Safety
/// `mask` must hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrm_model_mask(
    model: *const HrmModel,
    mask: *mut f64,
    d: usize,
) -> HrmStatus {
    guard(|| {
        let m = unsafe { nonnull(model, "model") }?;
        if d != m.model.theta.len() {
            return Err(
                HrmError::config("mask buffer length does not match model dimension").into(),
            );
        }
        let out = unsafe { slice_mut(mask, d, "mask") }?;
        match &m.gate {
            Some(g) => out.copy_from_slice(hard_mask(g).as_slice()),
            None => out.fill(1.0),
        }
        Ok(())
    })
}

/// Predictions for a row-major `n x d` matrix.
///
/// # Safety
/// `x` must hold `n*d` doubles and `out` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrm_model_predict(
    model: *const HrmModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> HrmStatus {
    guard(|| {
        let m = unsafe { nonnull(model, "model") }?;
        if d != m.model.theta.len() {
            return Err(HrmError::data("input width does not match model dimension").into());
        }
        let xs = unsafe { slice(x, n * d, "x") }?;
        let dst = unsafe { slice_mut(out, n, "out") }?;
        let pred = m.predictor().predict(&DMatrix::from_row_slice(n, d, xs));
        dst.copy_from_slice(pred.as_slice());
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hrm_model_free(model: *mut HrmModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Mean, unbiased standard deviation and maximum of per-environment losses.
///
/// # Safety
/// `losses` must hold `n` doubles; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hrm_metrics(
    losses: *const f64,
    n: usize,
    mean: *mut f64,
    std: *mut f64,
    max: *mut f64,
) -> HrmStatus {
    guard(|| {
        let l = unsafe { slice(losses, n, "losses") }?;
        if mean.is_null() || std.is_null() || max.is_null() {
            return Err(Failure::Null("metric outputs"));
        }
        let r = compute_metrics(l)?;
        unsafe {
            *mean = r.mean_error;
            *std = r.std_error;
            *max = r.max_error;
        }
        Ok(())
    })
}
