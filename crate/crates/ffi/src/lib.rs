//! C ABI over the softreg engine.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns an [`SrStatus`]; on
//! failure [`sr_last_error`] describes the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use softreg::softplus::{linear_threshold, LinearityQuery};
use softreg::{
    fit_mle, predict, run_chain, DataBlock, Error, FitResult, ModelSpec, Prediction, SamplerSettings, SoftplusParams,
};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is outside the domain of the operation.
    Domain = 2,
    /// Invalid model, data or run configuration.
    Config = 3,
    /// Non-finite values or a failed factorization.
    Numerical = 4,
    /// The object cannot serve the request (e.g. DIC of a point fit).
    State = 5,
    /// File or serialization failure.
    Io = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
    /// A caller-provided buffer has the wrong length.
    BufferSize = 8,
}

/// What [`sr_predict`] writes per observation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrPredictKind {
    Mean = 0,
    Quantile = 1,
}

/// Opaque model definition.
pub struct SrModel(ModelSpec);
/// Opaque data set: optional response plus named covariates.
pub struct SrData(DataBlock);
/// Opaque fitted model.
pub struct SrFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => SrStatus::Domain,
            Error::Config(_) => SrStatus::Config,
            Error::Numerical { .. } => SrStatus::Numerical,
            Error::State(_) => SrStatus::State,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => SrStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            SrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(SrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(SrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SrStatus::Config, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(SrStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Softplus with sharpness `a` evaluated at `x`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sr_softplus(a: f64, x: f64, out: *mut f64) -> SrStatus {
    guard(|| {
        *out_ref(out, "out")? = SoftplusParams::new(a)?.value(x);
        Ok(())
    })
}

/// Inverse softplus with sharpness `a`; `y` must be positive.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sr_softplus_inverse(a: f64, y: f64, out: *mut f64) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = softreg::softplus::softplus_inv(&SoftplusParams::new(a)?, y)?;
        Ok(())
    })
}

/// Smallest predictor value beyond which a change of `gamma` acts linearly within relative error `alpha`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn sr_linear_threshold(a: f64, gamma: f64, alpha: f64, out: *mut f64) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = linear_threshold(&LinearityQuery::new(SoftplusParams::new(a)?, gamma, alpha)?);
        Ok(())
    })
}

/// Parses a model definition from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_model_from_json(json: *const c_char, out: *mut *mut SrModel) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec: ModelSpec = serde_json::from_str(c_str(json, "json")?).map_err(Error::from)?;
        spec.validate()?;
        *out = into_handle(SrModel(spec));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`sr_model_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_model_free(model: *mut SrModel) {
    free_handle(model)
}

/// Builds a data set from arrays of length `n`. `y` may be null for prediction-only data.
/// `names` and `columns` each hold `n_columns` entries.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; names must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sr_data_new(
    y: *const f64,
    n: usize,
    names: *const *const c_char,
    columns: *const *const f64,
    n_columns: usize,
    out: *mut *mut SrData,
) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let names = slice(names, n_columns, "names")?;
        let columns = slice(columns, n_columns, "columns")?;
        let cols = names
            .iter()
            .zip(columns)
            .map(|(&name, &col)| Ok((c_str(name, "column name")?.to_string(), slice(col, n, "column")?.to_vec())))
            .collect::<Result<Vec<_>, Failure>>()?;
        let data = if y.is_null() {
            DataBlock::covariates(n, cols)?
        } else {
            DataBlock::new(slice(y, n, "y")?.to_vec(), cols)?
        };
        *out = into_handle(SrData(data));
        Ok(())
    })
}

/// Reads a numeric CSV file. `response` may be null when the file has no response column.
///
/// # Safety
/// `path` and `response` (if not null) must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_data_from_csv(
    path: *const c_char,
    response: *const c_char,
    out: *mut *mut SrData,
) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = c_str(path, "path")?;
        let response = if response.is_null() { None } else { Some(c_str(response, "response")?) };
        *out = into_handle(SrData(softreg::io::read_csv(Path::new(path), response)?));
        Ok(())
    })
}

/// Number of observations in a data set.
///
/// # Safety
/// `data` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_data_n(data: *const SrData, out: *mut usize) -> SrStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(data, "data")?.0.n();
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_data_free(data: *mut SrData) {
    free_handle(data)
}

/// Maximum-likelihood fit by Fisher scoring.
///
/// # Safety
/// `model` and `data` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_mle(model: *const SrModel, data: *const SrData, out: *mut *mut SrFit) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = &deref(model, "model")?.0;
        let result = fit_mle(model, &deref(data, "data")?.0, None)?;
        *out = into_handle(SrFit(FitResult::Mle { model: model.clone(), result }));
        Ok(())
    })
}

/// Posterior sample by Metropolis-Hastings with IWLS proposals.
///
/// # Safety
/// `model` and `data` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_mcmc(
    model: *const SrModel,
    data: *const SrData,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    out: *mut *mut SrFit,
) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let model = &deref(model, "model")?.0;
        let settings = SamplerSettings { iterations, burn_in, thin, seed };
        let chain = run_chain(model, &deref(data, "data")?.0, &settings, None)?;
        *out = into_handle(SrFit(FitResult::Posterior { model: model.clone(), chain }));
        Ok(())
    })
}

/// Total number of coefficients across all parameter blocks.
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_n_coefficients(fit: *const SrFit, out: *mut usize) -> SrStatus {
    guard(|| {
        let fit = &deref(fit, "fit")?.0;
        *out_ref(out, "out")? = fit.point_estimate().iter().map(|b| b.values.len()).sum();
        Ok(())
    })
}

/// Point estimates (MLE or posterior mean), blocks concatenated in model order.
///
/// # Safety
/// `buf` must hold `len` doubles, where `len` equals [`sr_fit_n_coefficients`].
#[no_mangle]
pub unsafe extern "C" fn sr_fit_coefficients(fit: *const SrFit, buf: *mut f64, len: usize) -> SrStatus {
    guard(|| {
        let values: Vec<f64> = deref(fit, "fit")?.0.point_estimate().into_iter().flat_map(|b| b.values).collect();
        if values.len() != len {
            return Err(fail(SrStatus::BufferSize, format!("buffer holds {len} values, fit has {}", values.len())));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(&values);
        Ok(())
    })
}

/// Deviance information criterion of a posterior fit on its data.
///
/// # Safety
/// `fit` and `data` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_dic(fit: *const SrFit, data: *const SrData, out: *mut f64) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let fit = &deref(fit, "fit")?.0;
        let chain = fit.chain().ok_or_else(|| fail(SrStatus::State, "DIC needs a posterior fit"))?;
        *out = softreg::dic(chain, fit.model(), &deref(data, "data")?.0)?.dic;
        Ok(())
    })
}

/// Plug-in prediction per observation of `newdata`; `prob` is used for quantiles only.
///
/// # Safety
/// `buf` must hold `len` doubles, where `len` equals the number of observations.
#[no_mangle]
pub unsafe extern "C" fn sr_predict(
    fit: *const SrFit,
    newdata: *const SrData,
    kind: SrPredictKind,
    prob: f64,
    buf: *mut f64,
    len: usize,
) -> SrStatus {
    guard(|| {
        let fit = &deref(fit, "fit")?.0;
        let newdata = &deref(newdata, "newdata")?.0;
        if newdata.n() != len {
            return Err(fail(SrStatus::BufferSize, format!("buffer holds {len} values, data has {}", newdata.n())));
        }
        let what = match kind {
            SrPredictKind::Mean => Prediction::Mean,
            SrPredictKind::Quantile => Prediction::Quantile(prob),
        };
        let table = predict(fit, newdata, what)?;
        let buf = slice_mut(buf, len, "buf")?;
        for (b, row) in buf.iter_mut().zip(&table.rows) {
            *b = row[0];
        }
        Ok(())
    })
}

/// Serializes a fit to JSON. Free the string with [`sr_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_to_json(fit: *const SrFit, out: *mut *mut c_char) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let json = serde_json::to_string(&deref(fit, "fit")?.0).map_err(Error::from)?;
        *out = CString::new(json).map_err(|e| fail(SrStatus::Io, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Restores a fit written by [`sr_fit_to_json`].
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_from_json(json: *const c_char, out: *mut *mut SrFit) -> SrStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let fit: FitResult = serde_json::from_str(c_str(json, "json")?).map_err(Error::from)?;
        fit.model().validate()?;
        *out = into_handle(SrFit(fit));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sr_fit_free(fit: *mut SrFit) {
    free_handle(fit)
}
