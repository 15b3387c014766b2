//! C ABI for the `dress` library.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`DressStatus`]; on failure a
//!   description is available from [`dress_last_error_message`] on the same
//!   thread until the next call.
//! * Matrices are row-major `double` arrays: `x` of an `n × d` sample holds
//!   row `i` at `x[i*d .. i*d + d]`.
//! * Fitted objects are opaque handles created by `dress_*_fit*` and released
//!   with the matching `*_free` function. Handles are immutable and may be
//!   read from several threads at once.
//!
//! The header `include/dress.h` is generated from this file by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use dress::asymptotics::diff_eta_phi;
use dress::density_ratio::{kulsif_fit, Basis, KernelRatioFit, KulsifConfig, MomentFunction, RidgeSelection};
use dress::simulation::paired_t_test;
use dress::{DressError, FitResult, LabeledData, RatioConfig, ScoreModel, SolverConfig};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DressStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid arguments (shape mismatch, bad hyperparameters, ...).
    Contract = 2,
    SingularSystem = 3,
    NonConvergence = 4,
    /// Iterates diverged, e.g. separable logistic data.
    Divergence = 5,
    RankDeficient = 6,
    DegenerateTest = 7,
    ExperimentUnstable = 8,
    Ingest = 9,
    Io = 10,
    /// A Rust panic was caught at the boundary.
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DressModel {
    LinearGaussian = 0,
    Logistic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DressMoment {
    /// `η = φ`.
    Naive = 0,
    /// `η = φ / (1 + (n'/n) w)`.
    Qin = 1,
}

/// Opaque result of a weighted or DRESS fit.
pub struct DressFit {
    inner: FitResult,
}

/// Opaque kernel density-ratio fit.
pub struct DressKernelRatio {
    inner: KernelRatioFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &DressError) -> DressStatus {
    match err.root() {
        DressError::Contract(_) => DressStatus::Contract,
        DressError::SingularSystem { .. } => DressStatus::SingularSystem,
        DressError::NonConvergence { .. } => DressStatus::NonConvergence,
        DressError::Divergence { .. } => DressStatus::Divergence,
        DressError::RankDeficient { .. } => DressStatus::RankDeficient,
        DressError::DegenerateTest => DressStatus::DegenerateTest,
        DressError::ExperimentUnstable { .. } => DressStatus::ExperimentUnstable,
        DressError::Ingest { .. } => DressStatus::Ingest,
        DressError::Io(_) => DressStatus::Io,
        DressError::Staged { .. } => unreachable!("root() strips stage tags"),
    }
}

enum Failure {
    Null(&'static str),
    Lib(DressError),
}

impl From<DressError> for Failure {
    fn from(e: DressError) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard<F>(f: F) -> DressStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DressStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            DressStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DressStatus::Panic
        }
    }
}

fn contract(msg: &str) -> Failure {
    Failure::Lib(DressError::Contract(msg.into()))
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn output<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols).ok_or_else(|| contract("matrix size overflows"))
}

/// # Safety
/// `x` must be null or valid for `rows * cols` reads.
unsafe fn matrix(x: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<DMatrix<f64>, Failure> {
    let len = checked_len(rows, cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, input(x, len, what)?))
}

/// # Safety
/// `x` must be valid for `n * d` reads and `y` for `n` reads.
unsafe fn labeled(x: *const f64, n: usize, d: usize, y: *const f64) -> Result<LabeledData, Failure> {
    let xm = matrix(x, n, d, "x")?;
    let yv = DVector::from_column_slice(input(y, n, "y")?);
    Ok(LabeledData::new(xm, yv)?)
}

fn score_model(model: DressModel, d: usize) -> ScoreModel {
    match model {
        DressModel::LinearGaussian => ScoreModel::linear_gaussian(d),
        DressModel::Logistic => ScoreModel::logistic(d),
    }
}

/// # Safety
/// `out` must be valid for one write.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dress_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next `dress_*` call on the same thread.
#[no_mangle]
pub extern "C" fn dress_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Unweighted maximum-likelihood fit.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles, `out` to a writable
/// handle pointer. Logistic responses must be 0 or 1.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_mle(
    model: DressModel,
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    out: *mut *mut DressFit,
) -> DressStatus {
    guard(|| {
        let data = labeled(x, n, d, y)?;
        let fit = dress::mle(&score_model(model, d), &data, &SolverConfig::default())?;
        emit(out, DressFit { inner: fit })
    })
}

/// Weighted maximum-likelihood fit with positive `weights` (length `n`).
///
/// # Safety
/// As [`dress_fit_mle`], plus `weights` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_weighted_mle(
    model: DressModel,
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    weights: *const f64,
    out: *mut *mut DressFit,
) -> DressStatus {
    guard(|| {
        let data = labeled(x, n, d, y)?;
        let w = DVector::from_column_slice(input(weights, n, "weights")?);
        let fit = dress::weighted_mle(&score_model(model, d), &data, &w, &SolverConfig::default())?;
        emit(out, DressFit { inner: fit })
    })
}

/// DRESS with the log-linear ratio `exp(θᵀφ(x))` on the polynomial basis of
/// `degree` (features `1, x, x², …`).
///
/// # Safety
/// As [`dress_fit_mle`], plus `unlabeled_x` must point to `nprime * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_dress_poly(
    model: DressModel,
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    unlabeled_x: *const f64,
    nprime: usize,
    degree: usize,
    moment: DressMoment,
    out: *mut *mut DressFit,
) -> DressStatus {
    guard(|| {
        let data = labeled(x, n, d, y)?;
        let xu = matrix(unlabeled_x, nprime, d, "unlabeled_x")?;
        let ratio = RatioConfig::Parametric {
            basis: Basis::polynomial(d, degree)?,
            moment: match moment {
                DressMoment::Naive => MomentFunction::NaivePhi,
                DressMoment::Qin => MomentFunction::QinOptimal,
            },
        };
        let fit = dress::dress(&score_model(model, d), &data, &xu, &ratio, &SolverConfig::default())?;
        emit(out, DressFit { inner: fit })
    })
}

fn kulsif_config(bandwidth: f64, lambda: f64, seed: u64) -> KulsifConfig {
    KulsifConfig {
        bandwidth: (bandwidth > 0.0).then_some(bandwidth),
        ridge: if lambda > 0.0 {
            RidgeSelection::Fixed { lambda }
        } else {
            RidgeSelection::CrossValidated
        },
        seed,
    }
}

/// DRESS with KuLSIF weights. `bandwidth <= 0` selects the median heuristic,
/// `lambda <= 0` selects the ridge by cross-validation.
///
/// # Safety
/// As [`dress_fit_dress_poly`].
#[no_mangle]
pub unsafe extern "C" fn dress_fit_dress_kulsif(
    model: DressModel,
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    unlabeled_x: *const f64,
    nprime: usize,
    bandwidth: f64,
    lambda: f64,
    seed: u64,
    out: *mut *mut DressFit,
) -> DressStatus {
    guard(|| {
        let data = labeled(x, n, d, y)?;
        let xu = matrix(unlabeled_x, nprime, d, "unlabeled_x")?;
        let ratio = RatioConfig::Kernel(kulsif_config(bandwidth, lambda, seed));
        let fit = dress::dress(&score_model(model, d), &data, &xu, &ratio, &SolverConfig::default())?;
        emit(out, DressFit { inner: fit })
    })
}

/// Length of the parameter vector of a fit (0 for NULL).
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_param_dim(fit: *const DressFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.alpha_hat.len())
}

/// Copy `α̂` into `out` (capacity `len`, at least the parameter dimension).
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_alpha(fit: *const DressFit, out: *mut f64, len: usize) -> DressStatus {
    guard(|| {
        let f = fit.as_ref().ok_or(Failure::Null("fit"))?;
        let a = &f.inner.alpha_hat;
        if len < a.len() {
            return Err(contract("output buffer too short"));
        }
        output(out, a.len(), "out")?.copy_from_slice(a.as_slice());
        Ok(())
    })
}

/// Length of `θ̂` (0 when the fit has no parametric ratio).
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_theta_dim(fit: *const DressFit) -> usize {
    fit.as_ref()
        .and_then(|f| f.inner.theta_hat.as_ref())
        .map_or(0, |t| t.len())
}

/// Copy `θ̂` into `out`; `Contract` when the fit has no parametric ratio.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_theta(fit: *const DressFit, out: *mut f64, len: usize) -> DressStatus {
    guard(|| {
        let f = fit.as_ref().ok_or(Failure::Null("fit"))?;
        let t = f.inner.theta_hat.as_ref().ok_or_else(|| contract("fit has no ratio parameter"))?;
        if len < t.len() {
            return Err(contract("output buffer too short"));
        }
        output(out, t.len(), "out")?.copy_from_slice(t.as_slice());
        Ok(())
    })
}

/// Residual max-norm of the (weighted) score equation at `α̂` (NaN for NULL).
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_residual(fit: *const DressFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.inner.final_residual)
}

/// Newton iterations used by the final stage.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_iterations(fit: *const DressFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.iterations)
}

/// Release a fit. NULL is ignored.
///
/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dress_fit_free(fit: *mut DressFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Fit a KuLSIF ratio `q(x)/p(x)` from `labeled_x` (`n × d`, density `p`) and
/// `unlabeled_x` (`nprime × d`, density `q`).
///
/// # Safety
/// Pointers must be valid for the stated sizes; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn dress_kulsif_fit(
    labeled_x: *const f64,
    n: usize,
    d: usize,
    unlabeled_x: *const f64,
    nprime: usize,
    bandwidth: f64,
    lambda: f64,
    seed: u64,
    out: *mut *mut DressKernelRatio,
) -> DressStatus {
    guard(|| {
        let xl = matrix(labeled_x, n, d, "labeled_x")?;
        let xu = matrix(unlabeled_x, nprime, d, "unlabeled_x")?;
        let fit = kulsif_fit(&xl, &xu, &kulsif_config(bandwidth, lambda, seed))?;
        emit(out, DressKernelRatio { inner: fit })
    })
}

/// Evaluate the clamped ratio at `m` points (`m × d`, row-major) into `out`.
///
/// # Safety
/// `ratio` must be a live handle, `x` valid for `m * d` reads and `out` for `m` writes.
#[no_mangle]
pub unsafe extern "C" fn dress_kulsif_eval(
    ratio: *const DressKernelRatio,
    x: *const f64,
    m: usize,
    out: *mut f64,
) -> DressStatus {
    guard(|| {
        let r = ratio.as_ref().ok_or(Failure::Null("ratio"))?;
        let d = r.inner.labeled_centers.ncols();
        let xs = matrix(x, m, d, "x")?;
        let w = r.inner.eval_rows(&xs);
        output(out, m, "out")?.copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Gaussian bandwidth used by a kernel fit (NaN for NULL).
///
/// # Safety
/// `ratio` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dress_kulsif_bandwidth(ratio: *const DressKernelRatio) -> f64 {
    ratio.as_ref().map_or(f64::NAN, |r| r.inner.bandwidth)
}

/// Release a kernel fit. NULL is ignored.
///
/// # Safety
/// `ratio` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dress_kulsif_free(ratio: *mut DressKernelRatio) {
    if !ratio.is_null() {
        drop(Box::from_raw(ratio));
    }
}

/// One-sample t-test of `differences` against 0, upper-tailed.
///
/// # Safety
/// `differences` must be valid for `len` reads; `t` and `p` for one write each.
#[no_mangle]
pub unsafe extern "C" fn dress_paired_t_test(
    differences: *const f64,
    len: usize,
    t: *mut f64,
    p_one_tailed: *mut f64,
) -> DressStatus {
    guard(|| {
        let r = paired_t_test(input(differences, len, "differences")?)?;
        output(t, 1, "t")?[0] = r.t;
        output(p_one_tailed, 1, "p_one_tailed")?[0] = r.p_one_tailed;
        Ok(())
    })
}

/// Asymptotic improvement matrix for `η ∝ φ` from evaluation samples
/// `ubar` (`samples × d`) and `phi` (`samples × r`), written row-major to
/// `out` (`d × d`).
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn dress_diff_eta_phi(
    ubar: *const f64,
    samples: usize,
    d: usize,
    phi: *const f64,
    r: usize,
    n: usize,
    nprime: usize,
    out: *mut f64,
) -> DressStatus {
    guard(|| {
        let u = matrix(ubar, samples, d, "ubar")?;
        let p = matrix(phi, samples, r, "phi")?;
        let report = diff_eta_phi(&u, &p, n, nprime)?;
        let dst = output(out, checked_len(d, d)?, "out")?;
        for i in 0..d {
            for j in 0..d {
                dst[i * d + j] = report.diff_matrix[(i, j)];
            }
        }
        Ok(())
    })
}
