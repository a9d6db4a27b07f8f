//! C ABI for `lowrank-mnl`.
//!
//! Objects cross the boundary as opaque handles (`LmnlMatrix`, `LmnlDataset`,
//! `LmnlFitResult`, `LmnlPartition`) created by `lmnl_*` constructors and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`LmnlStatus`]; on failure [`lmnl_last_error_message`] describes the
//! most recent error on the calling thread.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the duration of the call.
//! Handles must come from this library and must not be used after being
//! freed. Strings are NUL-terminated UTF-8 paths. Null pointers are reported
//! as `LMNL_STATUS_NULL_POINTER` rather than dereferenced.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lowrank_mnl::densemat::{read_csv, write_csv};
use lowrank_mnl::harness;
use lowrank_mnl::likelihood;
use lowrank_mnl::model::synth_lowrank_for;
use lowrank_mnl::sampler;
use lowrank_mnl::solver::{self, SolverConfig, SolverResult};
use lowrank_mnl::theory::{self, BoundParams, Triple};
use lowrank_mnl::{BundledDataset, CollabDataset, Dataset, Error, Matrix, PreferenceMatrix, Setting};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmnlStatus {
    Ok = 0,
    /// Invalid argument, malformed file contents, or a size limit.
    InvalidInput = 2,
    /// The solver hit a non-finite value.
    Numerical = 3,
    /// A file could not be read or written.
    Io = 4,
    NullPointer = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmnlSetting {
    Collab = 0,
    Bundled = 1,
}

impl From<LmnlSetting> for Setting {
    fn from(s: LmnlSetting) -> Self {
        match s {
            LmnlSetting::Collab => Setting::Collab,
            LmnlSetting::Bundled => Setting::Bundled,
        }
    }
}

/// Dense row-major matrix.
pub struct LmnlMatrix(Matrix);

/// Observations of either setting.
pub struct LmnlDataset(Dataset);

/// Output of [`lmnl_fit`].
pub struct LmnlFitResult(SolverResult);

/// Rounds of ordered index triples from [`lmnl_triple_partition`].
pub struct LmnlPartition(Vec<Vec<Triple>>);

/// Solver settings. Obtain defaults from [`lmnl_solver_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LmnlSolverOptions {
    /// Explicit weight, or the multiplier of the default weight when
    /// `use_default_lambda` is set.
    pub lambda: f64,
    pub use_default_lambda: bool,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub accelerate: bool,
}

/// Inputs to [`lmnl_bounds`]. Zero means "absent" for `rank`, `k1`, `k2`;
/// `q <= 0` means exact rank. `samples` is `k` (collab) or `n` (bundled).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LmnlBoundsInput {
    pub setting: LmnlSetting,
    pub d1: usize,
    pub d2: usize,
    pub rank: usize,
    pub samples: usize,
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub q: f64,
    pub rho_q: f64,
}

/// Outputs of [`lmnl_bounds`]. Entries that do not apply are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LmnlBounds {
    pub reference_lambda: f64,
    pub upper: f64,
    /// Lower bound with its unspecified universal constant set to 1.
    pub lower: f64,
    pub crossover_samples: f64,
    pub sample_regime_ok: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Message for the most recent failure on this thread, or null if the last
/// status-returning call succeeded. Valid until the next such call.
#[no_mangle]
pub extern "C" fn lmnl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

struct Failure(LmnlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Numerical { .. } => LmnlStatus::Numerical,
            Error::Io { .. } => LmnlStatus::Io,
            Error::InvalidInput(_) | Error::SizeLimit { .. } | Error::Parse { .. } => LmnlStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LmnlStatus::NullPointer, format!("{what} is null"))
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> LmnlStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmnlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal error: panic caught at the C boundary".into());
            LmnlStatus::Internal
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(LmnlStatus::InvalidInput, "path is not valid UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err(Failure(
            LmnlStatus::InvalidInput,
            format!("buffer holds {len} values but {} are needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---- matrices ----

/// Copies `rows * cols` row-major values into a new matrix.
#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut LmnlMatrix) -> LmnlStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = rows.checked_mul(cols).ok_or_else(|| Failure(LmnlStatus::InvalidInput, "size overflow".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        put(out, LmnlMatrix(Matrix::new(rows, cols, values)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_free(m: *mut LmnlMatrix) {
    free(m)
}

/// Number of rows, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_rows(m: *const LmnlMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Number of columns, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_cols(m: *const LmnlMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major entries into `out`, which must hold `len >= rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_copy_data(m: *const LmnlMatrix, out: *mut f64, len: usize) -> LmnlStatus {
    guard(|| copy_out(as_ref(m, "matrix")?.0.as_slice(), out, len))
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_read_csv(path: *const c_char, out: *mut *mut LmnlMatrix) -> LmnlStatus {
    guard(|| put(out, LmnlMatrix(read_csv(&path_arg(path)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_matrix_write_csv(m: *const LmnlMatrix, path: *const c_char) -> LmnlStatus {
    guard(|| Ok(write_csv(&as_ref(m, "matrix")?.0, &path_arg(path)?)?))
}

// ---- model and sampling ----

/// Random rank-`rank` preference matrix with largest entry magnitude `alpha`.
#[no_mangle]
pub unsafe extern "C" fn lmnl_synth_lowrank(
    setting: LmnlSetting,
    d1: usize,
    d2: usize,
    rank: usize,
    alpha: f64,
    seed: u64,
    out: *mut *mut LmnlMatrix,
) -> LmnlStatus {
    guard(|| {
        let pm = synth_lowrank_for(setting.into(), d1, d2, rank, alpha, seed)?;
        put(out, LmnlMatrix(pm.into_inner()))
    })
}

/// One `k`-wise ranking per row of `theta`, which must have zero row sums.
#[no_mangle]
pub unsafe extern "C" fn lmnl_sample_collab(
    theta: *const LmnlMatrix,
    k: usize,
    seed: u64,
    out: *mut *mut LmnlDataset,
) -> LmnlStatus {
    guard(|| {
        let pm = PreferenceMatrix::try_new(as_ref(theta, "theta")?.0.clone(), Setting::Collab)?;
        put(out, LmnlDataset(sampler::sample_collab_dataset(&pm, k, seed)?.into()))
    })
}

/// `n` bundled purchases; `theta` must have zero total sum.
#[no_mangle]
pub unsafe extern "C" fn lmnl_sample_bundled(
    theta: *const LmnlMatrix,
    k1: usize,
    k2: usize,
    n: usize,
    seed: u64,
    out: *mut *mut LmnlDataset,
) -> LmnlStatus {
    guard(|| {
        let pm = PreferenceMatrix::try_new(as_ref(theta, "theta")?.0.clone(), Setting::Bundled)?;
        put(out, LmnlDataset(sampler::sample_bundled_dataset(&pm, k1, k2, n, seed)?.into()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_dataset_read_jsonl(
    setting: LmnlSetting,
    path: *const c_char,
    d1: usize,
    d2: usize,
    out: *mut *mut LmnlDataset,
) -> LmnlStatus {
    guard(|| {
        let path = path_arg(path)?;
        let data: Dataset = match setting {
            LmnlSetting::Collab => CollabDataset::new(d1, d2, sampler::read_rankings_jsonl(&path)?)?.into(),
            LmnlSetting::Bundled => BundledDataset::new(d1, d2, sampler::read_bundled_jsonl(&path)?)?.into(),
        };
        put(out, LmnlDataset(data))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_dataset_write_jsonl(data: *const LmnlDataset, path: *const c_char) -> LmnlStatus {
    guard(|| {
        let path = path_arg(path)?;
        match &as_ref(data, "dataset")?.0 {
            Dataset::Collab(d) => sampler::write_rankings_jsonl(&path, d)?,
            Dataset::Bundled(d) => sampler::write_bundled_jsonl(&path, d)?,
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_dataset_setting(data: *const LmnlDataset, out: *mut LmnlSetting) -> LmnlStatus {
    guard(|| {
        let s = match as_ref(data, "dataset")?.0.setting() {
            Setting::Collab => LmnlSetting::Collab,
            Setting::Bundled => LmnlSetting::Bundled,
        };
        put_value(out, s)
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_dataset_free(data: *mut LmnlDataset) {
    free(data)
}

// ---- likelihood ----

/// Normalized negative log-likelihood of `theta` on `data`.
#[no_mangle]
pub unsafe extern "C" fn lmnl_nll(theta: *const LmnlMatrix, data: *const LmnlDataset, out: *mut f64) -> LmnlStatus {
    guard(|| {
        let v = likelihood::nll(&as_ref(theta, "theta")?.0, &as_ref(data, "dataset")?.0)?;
        put_value(out, v)
    })
}

/// Gradient of [`lmnl_nll`] as a new matrix.
#[no_mangle]
pub unsafe extern "C" fn lmnl_gradient(
    theta: *const LmnlMatrix,
    data: *const LmnlDataset,
    out: *mut *mut LmnlMatrix,
) -> LmnlStatus {
    guard(|| {
        let g = likelihood::grad(&as_ref(theta, "theta")?.0, &as_ref(data, "dataset")?.0)?;
        put(out, LmnlMatrix(g))
    })
}

// ---- solver ----

/// Default weight (multiplier 1), tolerance 1e-8, 5000 iterations, no momentum.
#[no_mangle]
pub extern "C" fn lmnl_solver_options_default() -> LmnlSolverOptions {
    let c = SolverConfig::default();
    LmnlSolverOptions {
        lambda: c.lambda,
        use_default_lambda: true,
        rel_tol: c.rel_tol,
        max_iter: c.max_iter,
        accelerate: c.accelerate,
    }
}

fn config_from(o: &LmnlSolverOptions) -> SolverConfig {
    let base = if o.use_default_lambda {
        SolverConfig::paper_default(o.lambda)
    } else {
        SolverConfig::explicit(o.lambda)
    };
    SolverConfig {
        rel_tol: o.rel_tol,
        max_iter: o.max_iter,
        accelerate: o.accelerate,
        ..base
    }
}

/// Fits the regularized estimator. A null `options` uses the defaults.
#[no_mangle]
pub unsafe extern "C" fn lmnl_fit(
    data: *const LmnlDataset,
    options: *const LmnlSolverOptions,
    out: *mut *mut LmnlFitResult,
) -> LmnlStatus {
    guard(|| {
        let opts = options.as_ref().copied().unwrap_or_else(|| lmnl_solver_options_default());
        let res = solver::fit(&as_ref(data, "dataset")?.0, &config_from(&opts))?;
        put(out, LmnlFitResult(res))
    })
}

/// Canonicalized estimate as a new matrix.
#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_estimate(res: *const LmnlFitResult, out: *mut *mut LmnlMatrix) -> LmnlStatus {
    guard(|| put(out, LmnlMatrix(as_ref(res, "fit result")?.0.estimate.theta().clone())))
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_iterations(res: *const LmnlFitResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.iterations)
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_converged(res: *const LmnlFitResult) -> bool {
    res.as_ref().is_some_and(|r| r.0.converged)
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_rank(res: *const LmnlFitResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.final_rank)
}

/// Weight used by the fit, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_lambda(res: *const LmnlFitResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.lambda)
}

/// Final objective, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_objective(res: *const LmnlFitResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.objective())
}

/// Length of the objective trace (iterations + 1).
#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_trace_len(res: *const LmnlFitResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.objective_trace.len())
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_copy_trace(res: *const LmnlFitResult, out: *mut f64, len: usize) -> LmnlStatus {
    guard(|| copy_out(&as_ref(res, "fit result")?.0.objective_trace, out, len))
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_fit_result_free(res: *mut LmnlFitResult) {
    free(res)
}

// ---- evaluation and theory ----

/// Rescaled Frobenius error between canonical representatives.
#[no_mangle]
pub unsafe extern "C" fn lmnl_rmse(
    estimate: *const LmnlMatrix,
    truth: *const LmnlMatrix,
    setting: LmnlSetting,
    out: *mut f64,
) -> LmnlStatus {
    guard(|| {
        let v = harness::rmse(&as_ref(estimate, "estimate")?.0, &as_ref(truth, "truth")?.0, setting.into())?;
        put_value(out, v)
    })
}

fn bound_params(i: &LmnlBoundsInput) -> BoundParams {
    let base = match i.setting {
        LmnlSetting::Collab => BoundParams::collab(i.d1, i.d2, i.samples, i.alpha),
        LmnlSetting::Bundled => BoundParams::bundled(i.d1, i.d2, i.samples, i.alpha),
    };
    let some = |v: usize| (v > 0).then_some(v);
    let (q, rho_q) = if i.q > 0.0 { (Some(i.q), Some(i.rho_q)) } else { (None, None) };
    BoundParams {
        r: some(i.rank),
        k1: some(i.k1),
        k2: some(i.k2),
        q,
        rho_q,
        ..base
    }
}

/// Reference weight, error bounds, crossover sample size and regime check.
#[no_mangle]
pub unsafe extern "C" fn lmnl_bounds(input: *const LmnlBoundsInput, out: *mut LmnlBounds) -> LmnlStatus {
    guard(|| {
        let p = bound_params(as_ref(input, "input")?);
        let bounds = LmnlBounds {
            reference_lambda: theory::reference_lambda(&p)?,
            upper: theory::minimax_upper(&p).unwrap_or(f64::NAN),
            lower: theory::minimax_lower(&p).map_or(f64::NAN, |l| l.value),
            crossover_samples: theory::upper_bound_crossover(&p).unwrap_or(f64::NAN),
            sample_regime_ok: theory::sample_regime_ok(&p)?,
        };
        put_value(out, bounds)
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_triple_partition(k: usize, out: *mut *mut LmnlPartition) -> LmnlStatus {
    guard(|| put(out, LmnlPartition(theory::triple_partition(k)?)))
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_partition_num_rounds(p: *const LmnlPartition) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// Number of triples in round `round`, or 0 when out of range.
#[no_mangle]
pub unsafe extern "C" fn lmnl_partition_round_len(p: *const LmnlPartition, round: usize) -> usize {
    p.as_ref().and_then(|p| p.0.get(round)).map_or(0, Vec::len)
}

/// Writes round `round` as consecutive 1-based `(a, b, c)` index triples;
/// `out` must hold `len >= 3 * round_len` values.
#[no_mangle]
pub unsafe extern "C" fn lmnl_partition_copy_round(
    p: *const LmnlPartition,
    round: usize,
    out: *mut usize,
    len: usize,
) -> LmnlStatus {
    guard(|| {
        let rounds = &as_ref(p, "partition")?.0;
        let r = rounds.get(round).ok_or_else(|| {
            Failure(
                LmnlStatus::InvalidInput,
                format!("round {round} out of range ({} rounds)", rounds.len()),
            )
        })?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len < 3 * r.len() {
            return Err(Failure(
                LmnlStatus::InvalidInput,
                format!("buffer holds {len} values but {} are needed", 3 * r.len()),
            ));
        }
        let flat: Vec<usize> = r.iter().flat_map(|&(a, b, c)| [a, b, c]).collect();
        ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lmnl_partition_free(p: *mut LmnlPartition) {
    free(p)
}
