//! C interface to `lmpanel`.
//!
//! Objects are opaque handles created by `lm_*_new`/`lm_*_read`/`lm_fit`
//! and released with the matching `_free`. Every fallible call returns an
//! [`LmStatus`]; on failure the message is available from
//! [`lm_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lmpanel::data::{long2wide, read_long_csv, read_wide_csv, CategorySpec, Dataset, LongSchema};
use lmpanel::fit::{aic, bic, FitConfig};
use lmpanel::fitted::{fit_variant, FittedModel};
use lmpanel::model::Variant;
use lmpanel::LmError;

/// Result codes. Values 2-4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 5,
    /// Internal error; the library caught a panic.
    Internal = 6,
}

/// Collapsed panel dataset.
pub struct LmDataset {
    inner: Dataset,
}

/// Fitted model of any variant.
pub struct LmFit {
    inner: FittedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(LmStatus, String);

impl From<LmError> for Failure {
    fn from(e: LmError) -> Self {
        let status = match &e {
            LmError::InvalidArgument(_) => LmStatus::InvalidArgument,
            LmError::Numerical(_) => LmStatus::Numerical,
            _ => LmStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: LmStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error");
            LmStatus::Internal
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(LmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(LmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(LmStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LmStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LmStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn parse_variant(name: &str) -> Result<Variant, Failure> {
    match name {
        "basic" => Ok(Variant::Basic),
        "cov-manifest" => Ok(Variant::CovManifest),
        "cov-latent" => Ok(Variant::CovLatent),
        "mixed" => Ok(Variant::Mixed),
        _ => Err(fail(LmStatus::InvalidArgument, format!("unknown variant '{name}'"))),
    }
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn lm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// AIC and BIC of a log-likelihood with `np` free parameters and sample size `n`.
///
/// # Safety
/// `aic_out` and `bic_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_information_criteria(
    loglik: f64,
    np: usize,
    n: u64,
    aic_out: *mut f64,
    bic_out: *mut f64,
) -> LmStatus {
    guard(|| {
        *out_ptr(aic_out, "aic_out")? = aic(loglik, np);
        *out_ptr(bic_out, "bic_out")? = bic(loglik, np, n);
        Ok(())
    })
}

/// Build a dataset from row-major arrays.
///
/// `responses` holds `n * t * r` 0-based codes indexed `[i][t][j]`;
/// `freq` holds `n` frequencies or is null for all ones; `x1` is `n * p1`
/// and `x2` is `n * (t-1) * p2` (either may be null when its width is 0);
/// `categories` holds `r` category counts. Identical rows are collapsed.
///
/// # Safety
/// Every non-null pointer must reference at least the stated number of
/// elements; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_dataset_new(
    responses: *const usize,
    n: usize,
    t: usize,
    r: usize,
    freq: *const u64,
    x1: *const f64,
    p1: usize,
    x2: *const f64,
    p2: usize,
    categories: *const usize,
    out: *mut *mut LmDataset,
) -> LmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if t == 0 || r == 0 {
            return Err(fail(LmStatus::InvalidArgument, "t and r must be positive"));
        }
        let y = slice(responses, n * t * r, "responses")?.to_vec();
        let freq = if freq.is_null() {
            vec![1; n]
        } else {
            slice(freq, n, "freq")?.to_vec()
        };
        let x1 = slice(x1, n * p1, "x1")?.to_vec();
        let x2 = slice(x2, n * (t - 1) * p2, "x2")?.to_vec();
        let cats = CategorySpec::new(slice(categories, r, "categories")?.to_vec())?;
        let shape_err = |_| fail(LmStatus::InvalidArgument, "array shape mismatch");
        let ds = Dataset::from_arrays(
            ndarray::Array3::from_shape_vec((n, t, r), y).map_err(shape_err)?,
            freq,
            Some(ndarray::Array2::from_shape_vec((n, p1), x1).map_err(shape_err)?),
            Some(ndarray::Array3::from_shape_vec((n, t - 1, p2), x2).map_err(shape_err)?),
            cats,
        )?;
        *out = Box::into_raw(Box::new(LmDataset { inner: ds }));
        Ok(())
    })
}

/// Read a CSV file. `wide != 0` selects the wide layout (`y{j}_t{t}`,
/// `x{m}_t{t}`, optional `freq`); otherwise the long layout with `id`,
/// `time`, responses `y1, y2, ...` and every other column a covariate.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_dataset_read_csv(
    path: *const c_char,
    wide: i32,
    out: *mut *mut LmDataset,
) -> LmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(string(path, "path")?);
        let ds = if wide != 0 {
            read_wide_csv(path, None)?
        } else {
            let header: Vec<String> = csv::Reader::from_path(path)
                .and_then(|mut r| r.headers().cloned())
                .map_err(LmError::from)?
                .iter()
                .map(|h| h.trim().to_string())
                .collect();
            let schema = LongSchema::from_header(&header);
            let records = read_long_csv(path, &schema)?;
            let cats = CategorySpec::infer(&records)?;
            long2wide(&records, &cats, &[])?
        };
        *out = Box::into_raw(Box::new(LmDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lm_dataset_free(ds: *mut LmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of distinct configurations (rows of decoding output).
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_dataset_n_configs(ds: *const LmDataset, out: *mut usize) -> LmStatus {
    guard(|| {
        *out_ptr(out, "out")? = reference(ds, "ds")?.inner.n_configs();
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_dataset_n_occasions(ds: *const LmDataset, out: *mut usize) -> LmStatus {
    guard(|| {
        *out_ptr(out, "out")? = reference(ds, "ds")?.inner.n_occasions();
        Ok(())
    })
}

/// Sample size (sum of frequencies).
///
/// # Safety
/// `ds` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_dataset_n_total(ds: *const LmDataset, out: *mut u64) -> LmStatus {
    guard(|| {
        *out_ptr(out, "out")? = reference(ds, "ds")?.inner.n_total();
        Ok(())
    })
}

/// Estimate `variant` ("basic", "cov-manifest", "cov-latent", "mixed").
/// `config_json` is null for defaults or a JSON object with any of the keys
/// `k`, `k1`, `tol`, `maxit`, `start`, `n_starts`, `seed`, `transitions`,
/// `param`, `fix_psi`. The basic and mixed models ignore covariates.
///
/// # Safety
/// `ds` must be a live handle, strings NUL-terminated, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_fit(
    ds: *const LmDataset,
    variant: *const c_char,
    config_json: *const c_char,
    out: *mut *mut LmFit,
) -> LmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ds = &reference(ds, "ds")?.inner;
        let variant = parse_variant(string(variant, "variant")?)?;
        let cfg: FitConfig = if config_json.is_null() {
            FitConfig::default()
        } else {
            serde_json::from_str(string(config_json, "config_json")?)
                .map_err(|e| fail(LmStatus::InvalidArgument, format!("config: {e}")))?
        };
        let data = match variant {
            Variant::Basic | Variant::Mixed => ds.without_covariates(),
            _ => ds.clone(),
        };
        let fit = fit_variant(&data, variant, &cfg)?;
        *out = Box::into_raw(Box::new(LmFit { inner: fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lm_fit_free(fit: *mut LmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Summary numbers of a fit. Any output pointer may be null.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_fit_summary(
    fit: *const LmFit,
    loglik: *mut f64,
    np: *mut usize,
    aic_out: *mut f64,
    bic_out: *mut f64,
    converged: *mut i32,
) -> LmStatus {
    guard(|| {
        let f = &reference(fit, "fit")?.inner;
        if let Some(p) = loglik.as_mut() {
            *p = f.loglik();
        }
        if let Some(p) = np.as_mut() {
            *p = f.np();
        }
        if let Some(p) = aic_out.as_mut() {
            *p = f.aic();
        }
        if let Some(p) = bic_out.as_mut() {
            *p = f.bic();
        }
        if let Some(p) = converged.as_mut() {
            *p = i32::from(f.converged());
        }
        Ok(())
    })
}

/// Serialize a fit as JSON. Release the string with [`lm_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_fit_to_json(fit: *const LmFit, out: *mut *mut c_char) -> LmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = serde_json::to_string(&reference(fit, "fit")?.inner).map_err(LmError::from)?;
        *out = CString::new(text)
            .map_err(|_| fail(LmStatus::Internal, "JSON contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Restore a fit written by [`lm_fit_to_json`] or the `fit` command.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lm_fit_from_json(json: *const c_char, out: *mut *mut LmFit) -> LmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let fit: FittedModel = serde_json::from_str(string(json, "json")?)
            .map_err(|e| fail(LmStatus::InvalidArgument, format!("not a fitted model: {e}")))?;
        *out = Box::into_raw(Box::new(LmFit { inner: fit }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Decode every configuration of `ds`. `ul` and `ug` receive row-major
/// `n_configs * T` 1-based states; `len` is the capacity of each buffer.
///
/// # Safety
/// Handles must be live; `ul` and `ug` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lm_fit_decode(
    fit: *const LmFit,
    ds: *const LmDataset,
    ul: *mut usize,
    ug: *mut usize,
    len: usize,
) -> LmStatus {
    guard(|| {
        let f = &reference(fit, "fit")?.inner;
        let ds = &reference(ds, "ds")?.inner;
        let data = match f.variant() {
            Variant::Basic | Variant::Mixed => ds.without_covariates(),
            _ => ds.clone(),
        };
        if ul.is_null() || ug.is_null() {
            return Err(fail(LmStatus::NullPointer, "output buffer is null"));
        }
        let need = data.n_configs() * data.n_occasions();
        if len < need {
            return Err(fail(
                LmStatus::BufferTooSmall,
                format!("buffers need {need} elements, got {len}"),
            ));
        }
        let dec = f.decode(&data)?;
        let ul = std::slice::from_raw_parts_mut(ul, need);
        let ug = std::slice::from_raw_parts_mut(ug, need);
        for (dst, src) in ul.iter_mut().zip(dec.ul.iter()) {
            *dst = *src;
        }
        for (dst, src) in ug.iter_mut().zip(dec.ug.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}
