//! C ABI over `arterial-risk`.
//!
//! Every fallible function returns an [`ArStatus`]. On failure the message is
//! kept per thread and read with [`ar_last_error_message`]. Datasets cross the
//! boundary as opaque [`ArDataset`] handles released with [`ar_dataset_free`].
//! Array arguments are caller-owned and sized by an explicit length.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use arterial_risk::diagnostics::roc_auc_values;
use arterial_risk::matching::load_dataset;
use arterial_risk::models::{cond_gradient, cond_log_likelihood, mle_fit, MleConfig};
use arterial_risk::simulator::{simulate_matched, SimConfig, SimOutput};
use arterial_risk::{fit_model, Error, FitConfig, MatchedDataset, ModelKind};
use libc::{c_char, size_t};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// Input data cannot support the request (no strata, one class, ...).
    Data = 5,
    /// Separation, non-convergence or a degenerate sampler.
    Numerical = 6,
    Panic = 7,
}

/// Opaque matched case-control dataset.
pub struct ArDataset {
    inner: MatchedDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> ArStatus {
    match e {
        Error::Io { .. } => ArStatus::Io,
        Error::MissingColumn { .. } | Error::BadRow { .. } | Error::Format { .. } | Error::Csv(_) => ArStatus::Format,
        Error::DimensionMismatch { .. }
        | Error::InvalidConfig(_)
        | Error::UnknownFeature(_)
        | Error::UnknownGrouping(_)
        | Error::NonPositiveTau(_) => ArStatus::InvalidArgument,
        Error::Separation { .. }
        | Error::NoConvergence { .. }
        | Error::NonFiniteTarget
        | Error::ZeroAcceptance { .. } => ArStatus::Numerical,
        Error::AtRatio { source, .. } => status_of(source),
        _ => ArStatus::Data,
    }
}

/// Runs `f`, recording any error or panic for the calling thread.
fn guard(f: impl FnOnce() -> Result<(), (ArStatus, String)>) -> ArStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ArStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (ArStatus, String)>;
}

impl<T> IntoFfi<T> for arterial_risk::Result<T> {
    fn ffi(self) -> Result<T, (ArStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (ArStatus, String) {
    (ArStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (ArStatus, String) {
    (ArStatus::InvalidArgument, msg.into())
}

unsafe fn dataset<'a>(ds: *const ArDataset) -> Result<&'a MatchedDataset, (ArStatus, String)> {
    ds.as_ref().map(|d| &d.inner).ok_or_else(|| null("dataset"))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (ArStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (ArStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> Result<(), (ArStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr.write(value);
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<(), (ArStatus, String)> {
    if expected == found {
        Ok(())
    } else {
        Err(invalid(format!("expected length {expected}, got {found}")))
    }
}

unsafe fn emit(out: *mut *mut ArDataset, inner: MatchedDataset) -> Result<(), (ArStatus, String)> {
    write(out, Box::into_raw(Box::new(ArDataset { inner })), "out")
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ar_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset CSV; its manifest must sit beside it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ar_dataset_load(path: *const c_char, out: *mut *mut ArDataset) -> ArStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let (ds, _) = load_dataset(Path::new(path)).ffi()?;
        emit(out, ds)
    })
}

/// Builds a dataset from `n_strata * (m + 1) * k` values, stratum-major with
/// the case row first in each stratum.
///
/// # Safety
/// `features` must point to that many doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ar_dataset_from_rows(
    features: *const f64,
    n_strata: size_t,
    m: size_t,
    k: size_t,
    out: *mut *mut ArDataset,
) -> ArStatus {
    guard(|| {
        if n_strata == 0 || m == 0 || k == 0 {
            return Err(invalid("n_strata, m and k must be positive"));
        }
        let values = input(features, n_strata * (m + 1) * k, "features")?;
        let strata: Vec<Vec<Vec<f64>>> = values
            .chunks_exact((m + 1) * k)
            .map(|s| s.chunks_exact(k).map(<[f64]>::to_vec).collect())
            .collect();
        emit(out, MatchedDataset::from_rows(&strata).ffi()?)
    })
}

/// Simulates a matched dataset over the default features
/// (avg_speed_s2, up_vol_s2, rainy). `beta` may be null for the default
/// coefficients, otherwise it holds `k` values.
///
/// # Safety
/// `beta` must be null or point to `k` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ar_simulate_matched(
    n_strata: size_t,
    m: size_t,
    seed: u64,
    beta: *const f64,
    k: size_t,
    out: *mut *mut ArDataset,
) -> ArStatus {
    guard(|| {
        let mut config = SimConfig::default();
        if !beta.is_null() {
            check_len(config.k(), k)?;
            config.true_beta = input(beta, k, "beta")?.to_vec();
        }
        config.n_strata = n_strata;
        config.m = m;
        config.seed = seed;
        match simulate_matched(&config).ffi()?.output {
            SimOutput::Matched(ds) => emit(out, ds),
            SimOutput::Corpus(_) => Err(invalid("unexpected corpus output")),
        }
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ar_dataset_free(ds: *mut ArDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of strata, controls per case and features.
///
/// # Safety
/// `ds` must be a live handle; each output pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn ar_dataset_shape(
    ds: *const ArDataset,
    n_strata: *mut size_t,
    m: *mut size_t,
    k: *mut size_t,
) -> ArStatus {
    guard(|| {
        let d = dataset(ds)?;
        write(n_strata, d.n_strata(), "n_strata")?;
        write(m, d.m(), "m")?;
        write(k, d.k(), "k")
    })
}

/// Conditional log-likelihood at `beta`.
///
/// # Safety
/// `beta` must hold `k` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ar_cond_log_likelihood(
    ds: *const ArDataset,
    beta: *const f64,
    k: size_t,
    out: *mut f64,
) -> ArStatus {
    guard(|| {
        let ll = cond_log_likelihood(input(beta, k, "beta")?, dataset(ds)?).ffi()?;
        write(out, ll, "out")
    })
}

/// Gradient of the conditional log-likelihood, written to `grad[0..k]`.
///
/// # Safety
/// `beta` and `grad` must each hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn ar_cond_gradient(
    ds: *const ArDataset,
    beta: *const f64,
    k: size_t,
    grad: *mut f64,
) -> ArStatus {
    guard(|| {
        let g = cond_gradient(input(beta, k, "beta")?, dataset(ds)?).ffi()?;
        output(grad, k, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Maximum conditional likelihood estimate and standard errors.
///
/// # Safety
/// `estimate` and `std_errors` must each hold `k` doubles; `log_likelihood`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn ar_cond_mle(
    ds: *const ArDataset,
    estimate: *mut f64,
    std_errors: *mut f64,
    k: size_t,
    log_likelihood: *mut f64,
) -> ArStatus {
    guard(|| {
        let d = dataset(ds)?;
        check_len(d.k(), k)?;
        let fit = mle_fit(d, &MleConfig::default()).ffi()?;
        output(estimate, k, "estimate")?.copy_from_slice(&fit.estimate);
        output(std_errors, k, "std_errors")?.copy_from_slice(&fit.std_errors);
        if !log_likelihood.is_null() {
            log_likelihood.write(fit.log_likelihood);
        }
        Ok(())
    })
}

/// Area under the ROC curve; nonzero `labels` mark positives. Ties earn half.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ar_auc(scores: *const f64, labels: *const u8, n: size_t, out: *mut f64) -> ArStatus {
    guard(|| {
        let scores = input(scores, n, "scores")?;
        if n > 0 && labels.is_null() {
            return Err(null("labels"));
        }
        let labels: Vec<bool> = (0..n).map(|i| *labels.add(i) != 0).collect();
        let r = roc_auc_values(scores, &labels).ffi()?;
        write(out, r.auc, "out")
    })
}

/// Bayesian conditional logistic fit. Writes posterior means and 95%
/// interval bounds for each coefficient plus DIC and AUC.
///
/// # Safety
/// `mean`, `bci_low` and `bci_high` must each hold `k` doubles; `dic` and
/// `auc` may be null.
#[no_mangle]
pub unsafe extern "C" fn ar_fit_conditional(
    ds: *const ArDataset,
    iterations: size_t,
    burn_in: size_t,
    seed: u64,
    mean: *mut f64,
    bci_low: *mut f64,
    bci_high: *mut f64,
    k: size_t,
    dic: *mut f64,
    auc: *mut f64,
) -> ArStatus {
    guard(|| {
        let d = dataset(ds)?;
        check_len(d.k(), k)?;
        let mut config = FitConfig::default();
        config.mcmc.iterations = iterations;
        config.mcmc.burn_in = burn_in;
        config.mcmc.seed = seed;
        let fitted = fit_model(d, ModelKind::Conditional, &config).ffi()?;
        let (mean, low, high) = (
            output(mean, k, "mean")?,
            output(bci_low, k, "bci_low")?,
            output(bci_high, k, "bci_high")?,
        );
        for (j, p) in fitted.summary.params.iter().take(k).enumerate() {
            mean[j] = p.mean;
            low[j] = p.q025;
            high[j] = p.q975;
        }
        if !dic.is_null() {
            dic.write(fitted.dic.dic);
        }
        if !auc.is_null() {
            auc.write(fitted.auc.auc);
        }
        Ok(())
    })
}
