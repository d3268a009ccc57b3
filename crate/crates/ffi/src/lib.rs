//! C ABI over the `censaft` library.
//!
//! Datasets live behind an opaque handle. Every function returns a
//! [`CensaftStatus`]; on failure [`censaft_last_error`] describes the most
//! recent error on the calling thread. Variable-length results are written
//! into caller buffers: pass the buffer capacity, and the required length is
//! always stored in `out_len` (with `CENSAFT_BUFFER_TOO_SMALL` if it does not
//! fit).

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use censaft::impute::{
    run_pipeline, tail_ties_extrapolate, tail_ties_iterative_with, ImputationMethod,
    PipelineOptions, TimeScale,
};
use censaft::km::{km_estimate, stute_weights};
use censaft::swls::default_ridge;
use censaft::{order_dataset, Error, OrderedDataset, SurvivalDataset};
use nalgebra::DMatrix;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CensaftStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidData = 2,
    DimensionMismatch = 3,
    Infeasible = 4,
    NotPositiveDefinite = 5,
    IterationLimit = 6,
    LargestNotCensored = 7,
    TooFewCovariates = 8,
    TooFewCensored = 9,
    NoTailTies = 10,
    BufferTooSmall = 11,
    InvalidArgument = 12,
    Numerical = 13,
    Panic = 14,
}

/// Estimation pipelines accepted by [`censaft_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CensaftMethod {
    Efron = 0,
    CondMean = 1,
    CondMedian = 2,
    ResampCondMean = 3,
    ResampCondMedian = 4,
    PredDiff = 5,
}

/// Opaque dataset handle.
pub struct CensaftDataset {
    ordered: OrderedDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CensaftStatus {
    match e {
        Error::InvalidData(_) | Error::InvalidConfig(_) => CensaftStatus::InvalidData,
        Error::DimensionMismatch(_) => CensaftStatus::DimensionMismatch,
        Error::Infeasible => CensaftStatus::Infeasible,
        Error::NotPositiveDefinite => CensaftStatus::NotPositiveDefinite,
        Error::IterationLimit { .. } => CensaftStatus::IterationLimit,
        Error::LargestNotCensored => CensaftStatus::LargestNotCensored,
        Error::TooFewCovariates { .. } => CensaftStatus::TooFewCovariates,
        Error::TooFewCensored { .. } => CensaftStatus::TooFewCensored,
        Error::NoTailTies => CensaftStatus::NoTailTies,
        _ => CensaftStatus::Numerical,
    }
}

type FfiResult = Result<(), (CensaftStatus, String)>;

fn fail(status: CensaftStatus, message: impl Into<String>) -> FfiResult {
    Err((status, message.into()))
}

fn lib(e: Error) -> (CensaftStatus, String) {
    (status_of(&e), e.to_string())
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> FfiResult) -> CensaftStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CensaftStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CensaftStatus::Panic
        }
    }
}

unsafe fn dataset<'a>(handle: *const CensaftDataset) -> Result<&'a CensaftDataset, (CensaftStatus, String)> {
    handle
        .as_ref()
        .ok_or((CensaftStatus::NullPointer, "dataset handle is null".into()))
}

/// Copies `values` into `out` if it fits and stores the length.
unsafe fn write_buffer(values: &[f64], out: *mut f64, capacity: usize, out_len: *mut usize) -> FfiResult {
    if out_len.is_null() {
        return fail(CensaftStatus::NullPointer, "out_len is null");
    }
    *out_len = values.len();
    if values.len() > capacity {
        return fail(
            CensaftStatus::BufferTooSmall,
            format!("need {} entries, buffer holds {capacity}", values.len()),
        );
    }
    if !values.is_empty() {
        if out.is_null() {
            return fail(CensaftStatus::NullPointer, "output buffer is null");
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn censaft_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from `n` times, 0/1 statuses and a row-major `n x p`
/// covariate matrix (`covariates` may be null when `p == 0`).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` must be a
/// valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn censaft_dataset_new(
    times: *const f64,
    statuses: *const u8,
    covariates: *const f64,
    n: usize,
    p: usize,
    out: *mut *mut CensaftDataset,
) -> CensaftStatus {
    guard(|| {
        if out.is_null() || times.is_null() || statuses.is_null() || (p > 0 && covariates.is_null()) {
            return fail(CensaftStatus::NullPointer, "null input pointer");
        }
        *out = ptr::null_mut();
        if n == 0 {
            return fail(CensaftStatus::InvalidData, "dataset is empty");
        }
        let times = std::slice::from_raw_parts(times, n).to_vec();
        let statuses = std::slice::from_raw_parts(statuses, n);
        let x = if p == 0 {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_row_slice(n, p, std::slice::from_raw_parts(covariates, n * p))
        };
        let data = SurvivalDataset::from_statuses(times, statuses, x).map_err(lib)?;
        let handle = Box::new(CensaftDataset {
            ordered: order_dataset(&data),
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Releases a handle from [`censaft_dataset_new`]. Null is ignored.
///
/// # Safety
/// `handle` must come from [`censaft_dataset_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn censaft_dataset_free(handle: *mut CensaftDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of observations, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn censaft_dataset_n(handle: *const CensaftDataset) -> usize {
    handle.as_ref().map_or(0, |d| d.ordered.n())
}

/// Number of covariates, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn censaft_dataset_p(handle: *const CensaftDataset) -> usize {
    handle.as_ref().map_or(0, |d| d.ordered.p())
}

/// K-M weights in input row order; `out_weights` holds `n` values.
///
/// # Safety
/// `handle` must be live and `out_weights` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn censaft_weights(
    handle: *const CensaftDataset,
    tail_correction: bool,
    out_weights: *mut f64,
) -> CensaftStatus {
    guard(|| {
        let d = dataset(handle)?;
        if out_weights.is_null() {
            return fail(CensaftStatus::NullPointer, "out_weights is null");
        }
        let w = stute_weights(&d.ordered, tail_correction);
        let out = std::slice::from_raw_parts_mut(out_weights, d.ordered.n());
        for (k, &row) in d.ordered.permutation().iter().enumerate() {
            out[row] = w.weights[k];
        }
        Ok(())
    })
}

/// K-M curve at its distinct event times. Each output buffer holds
/// `capacity` doubles; the number of points is stored in `out_len`.
///
/// # Safety
/// `handle` must be live; buffers must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn censaft_km(
    handle: *const CensaftDataset,
    tail_correction: bool,
    out_times: *mut f64,
    out_survival: *mut f64,
    out_jumps: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> CensaftStatus {
    guard(|| {
        let d = dataset(handle)?;
        let curve = km_estimate(&d.ordered, tail_correction);
        write_buffer(&curve.event_times, out_times, capacity, out_len)?;
        write_buffer(&curve.survival, out_survival, capacity, out_len)?;
        write_buffer(&curve.jumps, out_jumps, capacity, out_len)
    })
}

/// Fits one pipeline. `method` is a [`CensaftMethod`] value; a NaN
/// `lambda2` selects the default ridge. `out_beta` holds `p` doubles and
/// `out_imputed_time` receives NaN when no value is imputed. Either of
/// `out_intercept` and `out_imputed_time` may be null.
///
/// # Safety
/// `handle` must be live and `out_beta` must hold `p` doubles.
#[no_mangle]
pub unsafe extern "C" fn censaft_fit(
    handle: *const CensaftDataset,
    method: i32,
    lambda2: f64,
    seed: u64,
    out_beta: *mut f64,
    out_intercept: *mut f64,
    out_imputed_time: *mut f64,
) -> CensaftStatus {
    guard(|| {
        let d = dataset(handle)?;
        if out_beta.is_null() {
            return fail(CensaftStatus::NullPointer, "out_beta is null");
        }
        let method = match method {
            0 => ImputationMethod::Efron,
            1 => ImputationMethod::CondMean,
            2 => ImputationMethod::CondMedian,
            3 => ImputationMethod::ResampCondMean,
            4 => ImputationMethod::ResampCondMedian,
            5 => ImputationMethod::PredDiff,
            other => return fail(CensaftStatus::InvalidArgument, format!("unknown method {other}")),
        };
        let p = d.ordered.p();
        let lambda2 = if lambda2.is_nan() { default_ridge(p.max(1)) } else { lambda2 };
        let options = PipelineOptions {
            seed,
            ..PipelineOptions::default()
        };
        let res = run_pipeline(&d.ordered, method, lambda2, &options).map_err(lib)?;
        ptr::copy_nonoverlapping(res.fit.beta.as_ptr(), out_beta, p);
        if !out_intercept.is_null() {
            *out_intercept = res.fit.intercept;
        }
        if !out_imputed_time.is_null() {
            *out_imputed_time = res.imputed_time().unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Iterative imputation of censored ties at the maximum, in original time
/// units. `original_scale` selects the scale of the difference regression.
///
/// # Safety
/// `handle` must be live; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn censaft_tailties_iterative(
    handle: *const CensaftDataset,
    original_scale: bool,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> CensaftStatus {
    guard(|| {
        let d = dataset(handle)?;
        let scale = if original_scale { TimeScale::Original } else { TimeScale::Log };
        let res = tail_ties_iterative_with(&d.ordered, scale).map_err(lib)?;
        write_buffer(&res.times, out, capacity, out_len)
    })
}

/// Extrapolated lifetimes for censored ties at the maximum.
///
/// # Safety
/// `handle` must be live; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn censaft_tailties_extrapolate(
    handle: *const CensaftDataset,
    psi: f64,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> CensaftStatus {
    guard(|| {
        let d = dataset(handle)?;
        let res = tail_ties_extrapolate(&d.ordered, psi).map_err(lib)?;
        write_buffer(&res.times, out, capacity, out_len)
    })
}
