//! C ABI over `rck-core`.
//!
//! Models and reports cross the boundary as opaque handles that the caller
//! frees with the matching `*_free` function. Every entry point returns an
//! [`RckStatus`]; on failure the message is kept per thread and can be read
//! with [`rck_last_error`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use rck_core::model::{lambda_from_alpha_beta, BetVector, FiniteOutcomeModel, Source};
use rck_core::montecarlo::{simulate, SimulationPlan};
use rck_core::qrck::{solve_qrck, MomentEstimate};
use rck_core::rck::solve_finite_rck;
use rck_core::solver::{SolveReport, SolverConfig};
use rck_core::{kelly, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RckStatus {
    Ok = 0,
    /// The solve finished but missed its tolerance; the report is still set.
    NotConverged = 1,
    InvalidArgument = 2,
    NullPointer = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

/// Knobs for the finite solvers. Start from [`rck_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RckOptions {
    pub eps: f64,
    pub kkt_tol: f64,
    pub bisect_tol: f64,
    /// Cap on the projected-gradient warm-up.
    pub max_iters: usize,
    /// Cap on the accelerated polish that follows it; this is where a solve
    /// spends most of its iterations.
    pub polish_iters: usize,
}

/// A finite-outcome return model: K outcomes with probabilities, each a row of n returns.
pub struct RckModel {
    inner: FiniteOutcomeModel,
}

/// The result of a solve.
pub struct RckReport {
    inner: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RckStatus {
    match err {
        Error::Domain(_)
        | Error::InvalidModel(_)
        | Error::InvalidBet(_)
        | Error::Dimension { .. }
        | Error::NoArbitrage { .. } => RckStatus::InvalidArgument,
        Error::NonFinite(_) | Error::IterationLimit(_) => RckStatus::Numerical,
        _ => RckStatus::Internal,
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Buffer { needed: usize, got: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<RckStatus, Failure>) -> RckStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure::Core(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for `{name}`"));
            RckStatus::NullPointer
        }
        Ok(Err(Failure::Buffer { needed, got })) => {
            set_last_error(format!("buffer holds {got} values, {needed} needed"));
            RckStatus::BufferTooSmall
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("panic: {msg}"));
            RckStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn input<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, value: T, name: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    out.write(value);
    Ok(())
}

fn config_of(options: Option<&RckOptions>) -> SolverConfig {
    let mut cfg = SolverConfig::default();
    if let Some(o) = options {
        cfg.eps = o.eps;
        cfg.kkt_tol = o.kkt_tol;
        cfg.bisect_tol = o.bisect_tol;
        cfg.max_iters = o.max_iters;
        cfg.polish_iters = o.polish_iters;
    }
    cfg
}

unsafe fn finish(report: SolveReport, out: *mut *mut RckReport) -> Result<RckStatus, Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let status = if report.converged { RckStatus::Ok } else { RckStatus::NotConverged };
    if !report.converged {
        set_last_error(format!("solver stopped with KKT residual {:e}", report.kkt_residual));
    }
    out.write(Box::into_raw(Box::new(RckReport { inner: report })));
    Ok(status)
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rck_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn rck_options_default() -> RckOptions {
    let cfg = SolverConfig::default();
    RckOptions {
        eps: cfg.eps,
        kkt_tol: cfg.kkt_tol,
        bisect_tol: cfg.bisect_tol,
        max_iters: cfg.max_iters,
        polish_iters: cfg.polish_iters,
    }
}

/// Builds a model from `outcomes` probabilities and a row-major
/// `outcomes x n` return matrix whose last column is cash (all ones).
///
/// # Safety
/// `probs` must point to `outcomes` doubles, `returns` to `outcomes * n`
/// doubles, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rck_model_new(
    probs: *const f64,
    returns: *const f64,
    outcomes: usize,
    n: usize,
    out: *mut *mut RckModel,
) -> RckStatus {
    guard(|| {
        let cells = outcomes.checked_mul(n).ok_or_else(|| Error::Domain("outcomes * n overflows".into()))?;
        let p = input(probs, outcomes, "probs")?.to_vec();
        let r = input(returns, cells, "returns")?.to_vec();
        let model = FiniteOutcomeModel::from_flat(p, r, n)?;
        write(out, Box::into_raw(Box::new(RckModel { inner: model })), "out")?;
        Ok(RckStatus::Ok)
    })
}

/// Parses a model from the JSON problem format (`probs`, `returns`).
///
/// # Safety
/// `json` must point to `len` bytes of UTF-8 and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rck_model_from_json(json: *const c_char, len: usize, out: *mut *mut RckModel) -> RckStatus {
    guard(|| {
        if json.is_null() {
            return Err(Failure::Null("json"));
        }
        let bytes = slice::from_raw_parts(json.cast::<u8>(), len);
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Domain(format!("json is not UTF-8: {e}")))?;
        let model = FiniteOutcomeModel::from_json_str(text)?;
        write(out, Box::into_raw(Box::new(RckModel { inner: model })), "out")?;
        Ok(RckStatus::Ok)
    })
}

/// # Safety
/// `model` must come from `rck_model_new` or `rck_model_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rck_model_free(model: *mut RckModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of bet components, cash included. Returns 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn rck_model_dim(model: *const RckModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n())
}

/// λ = log β / log α for a drawdown level α and probability β, both in (0, 1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rck_lambda_from_alpha_beta(alpha: f64, beta: f64, out: *mut f64) -> RckStatus {
    guard(|| {
        write(out, lambda_from_alpha_beta(alpha, beta)?, "out")?;
        Ok(RckStatus::Ok)
    })
}

/// Growth-optimal bet. `options` may be NULL for defaults.
///
/// # Safety
/// `model` must be a live handle, `options` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rck_solve_kelly(
    model: *const RckModel,
    options: *const RckOptions,
    out: *mut *mut RckReport,
) -> RckStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let report = kelly::solve_finite(&m.inner, &config_of(options.as_ref()))?;
        finish(report, out)
    })
}

/// Risk-constrained bet with E(r'b)^(-λ) <= 1.
///
/// # Safety
/// Same contract as [`rck_solve_kelly`].
#[no_mangle]
pub unsafe extern "C" fn rck_solve_rck(
    model: *const RckModel,
    lambda: f64,
    options: *const RckOptions,
    out: *mut *mut RckReport,
) -> RckStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let report = solve_finite_rck(&m.inner, lambda, &config_of(options.as_ref()))?;
        finish(report, out)
    })
}

/// Quadratic approximation of the risk-constrained bet, built from the model's exact moments.
///
/// # Safety
/// Same contract as [`rck_solve_kelly`].
#[no_mangle]
pub unsafe extern "C" fn rck_solve_qrck(
    model: *const RckModel,
    lambda: f64,
    options: *const RckOptions,
    out: *mut *mut RckReport,
) -> RckStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let moments = MomentEstimate::from_model(&m.inner);
        let report = solve_qrck(&moments, lambda, &config_of(options.as_ref()))?;
        finish(report, out)
    })
}

/// # Safety
/// `report` must come from one of the solve functions and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rck_report_free(report: *mut RckReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Copies the bet into `buf`. `len` must be at least the model dimension.
///
/// # Safety
/// `report` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rck_report_bet(report: *const RckReport, buf: *mut f64, len: usize) -> RckStatus {
    guard(|| {
        let bet = deref(report, "report")?.inner.bet.as_slice();
        if len < bet.len() {
            return Err(Failure::Buffer { needed: bet.len(), got: len });
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        slice::from_raw_parts_mut(buf, bet.len()).copy_from_slice(bet);
        Ok(RckStatus::Ok)
    })
}

/// Scalar summary of a report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RckSummary {
    pub growth: f64,
    pub growth_std_err: f64,
    pub risk_value: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rck_report_summary(report: *const RckReport, out: *mut RckSummary) -> RckStatus {
    guard(|| {
        let r = &deref(report, "report")?.inner;
        let summary = RckSummary {
            growth: r.growth.mean,
            growth_std_err: r.growth.std_err,
            risk_value: r.risk_value.mean,
            lambda: r.lambda,
            kappa: r.kappa,
            kkt_residual: r.kkt_residual,
            iterations: r.iterations,
            converged: r.converged,
        };
        write(out, summary, "out")?;
        Ok(RckStatus::Ok)
    })
}

/// Monte Carlo estimate of Prob(min wealth < alpha) over `horizon` periods.
///
/// # Safety
/// `model` must be a live handle, `bet` must hold `len` doubles and the
/// out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rck_drawdown_risk(
    model: *const RckModel,
    bet: *const f64,
    len: usize,
    alpha: f64,
    trajectories: usize,
    horizon: usize,
    seed: u64,
    probability: *mut f64,
    std_err: *mut f64,
) -> RckStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let b = BetVector::new(input(bet, len, "bet")?.to_vec())?;
        let plan = SimulationPlan { trajectories, horizon, alpha_grid: vec![alpha], seed, stream_offset: 0 };
        let risk = simulate(Source::Model(&m.inner), &b, &plan)?.risk_at(alpha);
        write(probability, risk.probability, "probability")?;
        write(std_err, risk.std_err, "std_err")?;
        Ok(RckStatus::Ok)
    })
}
