//! C ABI over the estimators: opaque handles, integer status codes, and a
//! thread-local last-error message. The generated header lands in
//! `include/eiv.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::path::Path;
use std::ptr;

use eiv_core::baselines::{iv_estimate, ols, IvSpec};
use eiv_core::csvio::read_dataset;
use eiv_core::datagen::Dataset;
use eiv_core::objective::{ObjectiveSpec, WeightSpec};
use eiv_core::optimizer::{maximize, EstimateReport, SearchConfig};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EivStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    EstimationFailed = 4,
    Utf8Error = 5,
}

/// Estimator selector for `eiv_estimate`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EivMethod {
    Pd = 0,
    Ols = 1,
    C3 = 2,
    C4 = 3,
}

/// Tuning knobs for the PD estimator. Zero-initialize and override what you
/// need; zero or negative fields fall back to the defaults (u_max 1.0,
/// grid_size 41, denom_floor 0.05, seed 0).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EivOptions {
    pub u_max: f64,
    pub grid_size: usize,
    pub denom_floor: f64,
    pub seed: u64,
}

/// Opaque dataset handle.
pub struct EivDataset {
    inner: Dataset,
}

/// Opaque estimate-report handle.
pub struct EivReport {
    inner: EstimateReport,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
#[no_mangle]
pub extern "C" fn eiv_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Loads a dataset from a CSV file with header x1..xK,y. Returns null on
/// failure; `eiv_last_error` carries the reason.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eiv_dataset_from_csv(path: *const c_char) -> *mut EivDataset {
    if path.is_null() {
        set_error("null path");
        return ptr::null_mut();
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return ptr::null_mut();
        }
    };
    match read_dataset(Path::new(path)) {
        Ok(data) => Box::into_raw(Box::new(EivDataset { inner: data })),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Wraps caller-owned arrays: `x` is row-major N x K, `y` has length N.
/// The data is copied; the caller keeps ownership of the buffers.
///
/// # Safety
/// `x` must point to n*k readable doubles and `y` to n readable doubles.
#[no_mangle]
pub unsafe extern "C" fn eiv_dataset_from_arrays(
    x: *const f64,
    y: *const f64,
    n: usize,
    k: usize,
) -> *mut EivDataset {
    if x.is_null() || y.is_null() {
        set_error("null data pointer");
        return ptr::null_mut();
    }
    if n == 0 || k == 0 {
        set_error("empty dimensions");
        return ptr::null_mut();
    }
    let xs = std::slice::from_raw_parts(x, n * k);
    let ys = std::slice::from_raw_parts(y, n);
    let xm = nalgebra::DMatrix::from_fn(n, k, |r, c| xs[r * k + c]);
    let yv = nalgebra::DVector::from_column_slice(ys);
    match Dataset::from_observables(xm, yv) {
        Ok(data) => Box::into_raw(Box::new(EivDataset { inner: data })),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Number of observations in the dataset (0 for null).
#[no_mangle]
pub extern "C" fn eiv_dataset_n(dataset: *const EivDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { (*dataset).inner.n() }
}

/// Number of regressors in the dataset (0 for null).
#[no_mangle]
pub extern "C" fn eiv_dataset_k(dataset: *const EivDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { (*dataset).inner.k() }
}

/// Frees a dataset handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn eiv_dataset_free(dataset: *mut EivDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

fn objective_from_options(opts: Option<&EivOptions>) -> ObjectiveSpec {
    let mut spec = ObjectiveSpec::default();
    if let Some(o) = opts {
        if o.u_max > 0.0 {
            spec.weight = WeightSpec::uniform(o.u_max);
        }
        if o.grid_size > 0 {
            spec.grid_size = o.grid_size;
        }
        if o.denom_floor > 0.0 {
            spec.denom_floor = o.denom_floor;
        }
    }
    spec
}

/// Runs an estimator on the dataset. On success writes a report handle to
/// `out_report` (caller frees with `eiv_report_free`). `options` may be null
/// for defaults and only affects the PD method.
#[no_mangle]
pub extern "C" fn eiv_estimate(
    dataset: *const EivDataset,
    method: EivMethod,
    options: *const EivOptions,
    out_report: *mut *mut EivReport,
) -> EivStatus {
    if dataset.is_null() || out_report.is_null() {
        set_error("null pointer argument");
        return EivStatus::NullPointer;
    }
    let data = unsafe { &(*dataset).inner };
    let opts = if options.is_null() {
        None
    } else {
        Some(unsafe { &*options })
    };
    let result = match method {
        EivMethod::Ols => ols(data),
        EivMethod::C3 => iv_estimate(data, &IvSpec::c3()),
        EivMethod::C4 => iv_estimate(data, &IvSpec::c4()),
        EivMethod::Pd => {
            let spec = objective_from_options(opts);
            let seed = opts.map(|o| o.seed).unwrap_or(0);
            match spec.validate() {
                Ok(()) => ols(data).and_then(|anchor| {
                    let cfg = SearchConfig::anchored_at(&anchor.b_hat, seed);
                    maximize(data, &spec, &cfg)
                }),
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(report) => {
            unsafe {
                *out_report = Box::into_raw(Box::new(EivReport { inner: report }));
            }
            EivStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            EivStatus::EstimationFailed
        }
    }
}

/// Number of estimated coefficients.
#[no_mangle]
pub extern "C" fn eiv_report_len(report: *const EivReport) -> usize {
    if report.is_null() {
        return 0;
    }
    unsafe { (*report).inner.b_hat.len() }
}

/// Coefficient i (NaN when out of range or null).
#[no_mangle]
pub extern "C" fn eiv_report_coef(report: *const EivReport, i: usize) -> f64 {
    if report.is_null() {
        return f64::NAN;
    }
    let r = unsafe { &(*report).inner };
    r.b_hat.get(i).copied().unwrap_or(f64::NAN)
}

/// Objective value at the optimum (NaN for the moment estimators).
#[no_mangle]
pub extern "C" fn eiv_report_objective(report: *const EivReport) -> f64 {
    if report.is_null() {
        return f64::NAN;
    }
    unsafe { (*report).inner.objective_at_opt }
}

/// 1 when the optimizer converged, 0 otherwise.
#[no_mangle]
pub extern "C" fn eiv_report_converged(report: *const EivReport) -> c_int {
    if report.is_null() {
        return 0;
    }
    unsafe { (*report).inner.converged as c_int }
}

/// 1 when the flat-objective (non-identification) flag is set.
#[no_mangle]
pub extern "C" fn eiv_report_flat_objective(report: *const EivReport) -> c_int {
    if report.is_null() {
        return 0;
    }
    unsafe { (*report).inner.flat_objective as c_int }
}

/// Frees a report handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn eiv_report_free(report: *mut EivReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}
