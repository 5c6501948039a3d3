//! C ABI for the dropout training library.
//!
//! Every entry point returns a [`DroStatus`]. On failure a message is kept in
//! thread-local storage and can be read back with [`dro_last_error_message`].
//! Handles are opaque and must be released with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dropout_dro::solvers::mlmc::MlmcConfig;
use dropout_dro::{
    choose_delta, dropout_ridge, make_family, mlmc_solve, solve_exact_gd, Dataset, DroError, DropoutSpec, FamilyKind,
    GdConfig, MlmcReport,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Singular = 4,
    NoConvergence = 5,
    Diverged = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DroFamily {
    Linear = 0,
    Logistic = 1,
    Poisson = 2,
}

impl From<DroFamily> for FamilyKind {
    fn from(f: DroFamily) -> Self {
        match f {
            DroFamily::Linear => FamilyKind::Linear,
            DroFamily::Logistic => FamilyKind::Logistic,
            DroFamily::Poisson => FamilyKind::Poisson,
        }
    }
}

/// Opaque design matrix plus response.
pub struct DroDataset {
    inner: Dataset,
}

/// Opaque result of an MLMC run.
pub struct DroMlmcReport {
    inner: MlmcReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &DroError) -> DroStatus {
    match err {
        DroError::DimensionMismatch { .. } => DroStatus::DimensionMismatch,
        DroError::InvalidParameter(_)
        | DroError::InvalidData(_)
        | DroError::EmptyDataset
        | DroError::TooManyMasks { .. }
        | DroError::NonPositiveMu(_)
        | DroError::VarianceUndefined(_)
        | DroError::Config(_) => DroStatus::InvalidArgument,
        DroError::Singular(_) => DroStatus::Singular,
        DroError::NoConvergence { .. } => DroStatus::NoConvergence,
        DroError::Diverged(_) => DroStatus::Diverged,
        DroError::NonFinite(_) | DroError::LevelCapExceeded { .. } => DroStatus::Numeric,
        DroError::ReplicaFailed { source, .. } => status_of(source),
        DroError::Io(_) | DroError::Csv(_) => DroStatus::Internal,
    }
}

struct Failure(DroStatus, String);

impl From<DroError> for Failure {
    fn from(e: DroError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard<F>(f: F) -> DroStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DroStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            DroStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DroStatus::NullPointer, format!("{what} is null"))
}

unsafe fn dataset_ref<'a>(ds: *const DroDataset) -> Result<&'a Dataset, Failure> {
    ds.as_ref().map(|d| &d.inner).ok_or_else(|| null("dataset"))
}

unsafe fn write_slice(src: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len < src.len() {
        return Err(Failure(
            DroStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Message for the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn dro_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies a row-major `n × d` matrix `x` and response `y` into a new dataset.
///
/// # Safety
/// `x` must point to `n * d` doubles and `y` to `n` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dro_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut DroDataset,
) -> DroStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if x.is_null() || y.is_null() {
            return Err(null("x or y"));
        }
        let len = n.checked_mul(d).ok_or_else(|| Failure(DroStatus::InvalidArgument, "n * d overflows".into()))?;
        let xs = std::slice::from_raw_parts(x, len).to_vec();
        let ys = std::slice::from_raw_parts(y, n).to_vec();
        let inner = Dataset::new(xs, ys, d)?;
        *out = Box::into_raw(Box::new(DroDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`dro_dataset_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dro_dataset_free(ds: *mut DroDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn dro_dataset_dim(ds: *const DroDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.d())
}

/// # Safety
/// `ds` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn dro_dataset_len(ds: *const DroDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Closed-form linear dropout estimate, written to `beta_out`.
///
/// # Safety
/// `ds` must be a live handle and `beta_out` must hold `beta_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dro_dropout_ridge(
    ds: *const DroDataset,
    delta: f64,
    beta_out: *mut f64,
    beta_len: usize,
) -> DroStatus {
    guard(|| {
        let data = dataset_ref(ds)?;
        let sol = dropout_ridge(data, delta)?;
        write_slice(&sol.beta, beta_out, beta_len)
    })
}

/// Tuned dropout probability `min(max(z,0)·σ/(μ√n), 0.9)`.
///
/// # Safety
/// `delta_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dro_choose_delta(
    alpha: f64,
    n: usize,
    mu_hat: f64,
    sigma_hat: f64,
    delta_out: *mut f64,
) -> DroStatus {
    guard(|| {
        if delta_out.is_null() {
            return Err(null("delta_out"));
        }
        *delta_out = choose_delta(alpha, n, mu_hat, sigma_hat)?.delta;
        Ok(())
    })
}

/// Minimizes the exact dropout objective by gradient descent.
///
/// `phi_out` may be null.
///
/// # Safety
/// `ds` must be a live handle and `beta_out` must hold `beta_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dro_fit_exact(
    ds: *const DroDataset,
    family: DroFamily,
    delta: f64,
    beta_out: *mut f64,
    beta_len: usize,
    phi_out: *mut f64,
) -> DroStatus {
    guard(|| {
        let data = dataset_ref(ds)?;
        let spec = DropoutSpec::homogeneous(delta, data.d())?;
        let fam = make_family(family.into());
        let params = solve_exact_gd(&fam, data, &spec, &GdConfig::default())?;
        write_slice(&params.beta, beta_out, beta_len)?;
        if !phi_out.is_null() {
            *phi_out = params.phi;
        }
        Ok(())
    })
}

/// Runs the randomized multilevel estimator with a Newton inner solver.
///
/// # Safety
/// `ds` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_solve(
    ds: *const DroDataset,
    family: DroFamily,
    delta: f64,
    r: f64,
    m0: usize,
    replicas: usize,
    seed: u64,
    out: *mut *mut DroMlmcReport,
) -> DroStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = dataset_ref(ds)?;
        let spec = DropoutSpec::homogeneous(delta, data.d())?;
        let fam = make_family(family.into());
        let cfg = MlmcConfig { r, m0, replicas, master_seed: seed, ..MlmcConfig::default() };
        let inner = mlmc_solve(&fam, data, &spec, &cfg)?;
        *out = Box::into_raw(Box::new(DroMlmcReport { inner }));
        Ok(())
    })
}

/// # Safety
/// `report` must be a live report handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_report_estimate(report: *const DroMlmcReport, out: *mut f64, len: usize) -> DroStatus {
    guard(|| {
        let rep = report.as_ref().ok_or_else(|| null("report"))?;
        write_slice(&rep.inner.estimate, out, len)
    })
}

/// Per-coordinate standard errors of the estimate.
///
/// # Safety
/// `report` must be a live report handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_report_std_errors(
    report: *const DroMlmcReport,
    out: *mut f64,
    len: usize,
) -> DroStatus {
    guard(|| {
        let rep = report.as_ref().ok_or_else(|| null("report"))?;
        write_slice(&rep.inner.std_errors(), out, len)
    })
}

/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_report_dim(report: *const DroMlmcReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.estimate.len())
}

/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_report_total_draws(report: *const DroMlmcReport) -> u64 {
    report.as_ref().map_or(0, |r| r.inner.total_draws)
}

/// # Safety
/// `report` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_report_replicas(report: *const DroMlmcReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.replicas.len())
}

/// # Safety
/// `report` must come from [`dro_mlmc_solve`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dro_mlmc_report_free(report: *mut DroMlmcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
