//! Risk-constrained Kelly betting:
//!
//! ```text
//! maximize    E log(r'b)
//! subject to  E (r'b)^(-lambda) <= 1,  1'b = 1,  b >= 0.
//! ```
//!
//! A bet satisfying the constraint has `Prob(W_min < alpha) < alpha^lambda`
//! for every `alpha` in `(0, 1)`.
//!
//! The finite solver minimizes the Lagrangian
//! `L(b, kappa) = -E log(r'b) + kappa (E (r'b)^(-lambda) - 1)` over the
//! truncated simplex for fixed `kappa`, and locates `kappa` by bisection on
//! the constraint value, which is nonincreasing in `kappa`. The sampled
//! solver is the primal-dual stochastic gradient method with averaging.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{cdf_bound, dot, BetVector, Estimate, FiniteOutcomeModel, ReturnSampler};
use crate::qrck;
use crate::rng::{substream, Namespace, TRAIN_STREAM};
use crate::simplex::TruncatedSimplex;
use crate::solver::{
    averaged_descent, polish, Objective, PolishOptions, SolveReport, WarmStart,
};

pub use crate::solver::{KktResiduals, SolverConfig, StepSchedule};

/// Averaged projected-gradient iterations run before polishing.
const WARMUP_ITERS: usize = 200;
/// Upper end of the search for the dual variable of the finite solver.
const KAPPA_SEARCH_MAX: f64 = 1e12;
const KAPPA_BISECT_MAX: usize = 200;

/// `-E log(r'b) + kappa (E (r'b)^-lambda - 1)` over an exact or empirical
/// finite distribution.
pub(crate) struct Lagrangian<'a> {
    model: &'a FiniteOutcomeModel,
    lambda: f64,
    kappa: f64,
}

impl<'a> Lagrangian<'a> {
    pub(crate) fn new(model: &'a FiniteOutcomeModel, lambda: f64, kappa: f64) -> Self {
        Lagrangian { model, lambda, kappa }
    }
}

impl Objective for Lagrangian<'_> {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let coupled = self.kappa * self.lambda;
        let mut log_term = 0.0;
        let mut risk_excess = 0.0;
        for (p, row) in self.model.rows() {
            let u = dot(row, x);
            if !(u > 0.0) {
                return f64::INFINITY;
            }
            let lu = u.ln();
            log_term -= p * lu;
            let mut coef = p / u;
            if coupled > 0.0 {
                risk_excess += p * (-self.lambda * lu).exp_m1();
                coef *= 1.0 + coupled * (-self.lambda * lu).exp();
            }
            for (g, r) in grad.iter_mut().zip(row) {
                *g -= coef * r;
            }
        }
        let f = log_term + self.kappa * risk_excess;
        if f.is_finite() && grad.iter().all(|g| g.is_finite()) {
            f
        } else {
            f64::INFINITY
        }
    }
}

/// `E (r'b)^-lambda - 1`, accurate when the constraint is nearly tight.
/// `+inf` when some outcome has `r'b = 0`.
pub fn risk_excess(model: &FiniteOutcomeModel, b: &[f64], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for (p, row) in model.rows() {
        let u = dot(row, b);
        if !(u > 0.0) {
            return f64::INFINITY;
        }
        s += p * (-lambda * u.ln()).exp_m1();
    }
    if s.is_nan() {
        f64::INFINITY
    } else {
        s
    }
}

/// `E (r'b)^-lambda`: an exact finite sum, or a sample mean with its
/// standard error for empirical models. Outcomes with `r'b = 0` make the
/// value `+inf`.
pub fn risk_value(model: &FiniteOutcomeModel, b: &BetVector, lambda: f64) -> Estimate {
    let b = b.as_slice();
    if lambda == 0.0 {
        return Estimate::exact(1.0);
    }
    if model.is_exact() {
        return Estimate::exact(1.0 + risk_excess(model, b, lambda));
    }
    let vals: Vec<f64> = model
        .wealth_factors(b)
        .into_iter()
        .map(|u| if u > 0.0 { (-lambda * u.ln()).exp() } else { f64::INFINITY })
        .collect();
    model.expect(&vals)
}

/// `log sum_i exp(log pi_i - lambda log(r_i'b))`, the log of the constraint
/// value in log-sum-exp form. Stays finite where the plain sum overflows.
pub fn log_risk_value(model: &FiniteOutcomeModel, b: &BetVector, lambda: f64) -> f64 {
    let terms: Vec<f64> = model
        .rows()
        .map(|(p, row)| {
            let u = dot(row, b.as_slice());
            if u > 0.0 {
                p.ln() - lambda * u.ln()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Drawdown guarantee implied by the risk constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lambda: f64,
    pub alpha: f64,
    pub risk_value: f64,
    /// `true` when `risk_value <= 1`, so that `Prob(W_min < a) < a^lambda`
    /// holds for every threshold `a` at once.
    pub guaranteed: bool,
    /// `alpha^lambda` when guaranteed.
    pub bound: Option<f64>,
    /// The bet keeps cash, so wealth can never reach zero.
    pub ruin_free: bool,
}

impl Certificate {
    /// The guaranteed bound at another threshold.
    pub fn bound_at(&self, alpha: f64) -> Result<Option<f64>> {
        if !self.guaranteed {
            return Ok(None);
        }
        cdf_bound(self.lambda, alpha).map(Some)
    }
}

pub fn certify(b: &BetVector, lambda: f64, alpha: f64, risk_value: f64) -> Result<Certificate> {
    let bound = cdf_bound(lambda, alpha)?;
    let guaranteed = risk_value <= 1.0;
    Ok(Certificate {
        lambda,
        alpha,
        risk_value,
        guaranteed,
        bound: guaranteed.then_some(bound),
        ruin_free: b.cash_weight() > 0.0,
    })
}

/// Optimality conditions of the risk-constrained problem at `(b, kappa)`:
/// feasibility, complementary slackness, and
/// `E r_i/(r'b) + kappa lambda E r_i/(r'b)^(lambda+1) <= 1 + kappa lambda`
/// with equality on the support `b_i > support_tol`.
pub fn optimality_residual(
    model: &FiniteOutcomeModel,
    b: &BetVector,
    kappa: f64,
    lambda: f64,
    support_tol: f64,
) -> KktResiduals {
    let x = b.as_slice();
    let n = model.n();
    let excess = risk_excess(model, x, lambda);
    if !excess.is_finite() {
        return KktResiduals {
            feasibility: f64::INFINITY,
            slackness: f64::INFINITY,
            stationarity: f64::INFINITY,
        };
    }
    let coupled = kappa * lambda;
    let mut g = vec![0.0; n];
    for (p, row) in model.rows() {
        let u = dot(row, x);
        let mut coef = p / u;
        if coupled > 0.0 {
            coef *= 1.0 + coupled * (-lambda * u.ln()).exp();
        }
        for (gi, r) in g.iter_mut().zip(row) {
            *gi += coef * r;
        }
    }
    let tau = 1.0 + coupled;
    let mut stationarity: f64 = 0.0;
    for (gi, bi) in g.iter().zip(x) {
        let v = if *bi > support_tol { (gi - tau).abs() } else { (gi - tau).max(0.0) };
        stationarity = if v.is_nan() { f64::INFINITY } else { stationarity.max(v) };
    }
    KktResiduals {
        feasibility: excess.max(0.0),
        slackness: (kappa * excess).abs(),
        stationarity,
    }
}

/// The pair `((1/lambda) log E (r'b)^-lambda, -E log(r'b) + (lambda/2) var log(r'b))`.
/// The two agree to second order in `lambda`, so the risk constraint
/// behaves like a variance penalty on log wealth for small `lambda`.
pub fn light_regime_approx(model: &FiniteOutcomeModel, b: &BetVector, lambda: f64) -> Result<(f64, f64)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let logs: Vec<f64> = model.wealth_factors(b.as_slice()).into_iter().map(f64::ln).collect();
    if logs.iter().any(|l| !l.is_finite()) {
        return Err(domain("the bet loses everything in some outcome"));
    }
    let mean: f64 = model.probs().iter().zip(&logs).map(|(p, l)| p * l).sum();
    if lambda == 0.0 {
        return Ok((-mean, -mean));
    }
    let var: f64 = model.probs().iter().zip(&logs).map(|(p, l)| p * (l - mean).powi(2)).sum();
    let excess: f64 = model.probs().iter().zip(&logs).map(|(p, l)| p * (-lambda * l).exp_m1()).sum();
    Ok((excess.ln_1p() / lambda, -mean + 0.5 * lambda * var))
}

/// Two-outcome constraint `pi (1 + b1 (P-1))^-lambda + (1-pi)(1-b1)^-lambda - 1`.
fn two_outcome_excess(pi: f64, payoff: f64, lambda: f64, b1: f64) -> f64 {
    pi * (-lambda * (b1 * (payoff - 1.0)).ln_1p()).exp_m1()
        + (1.0 - pi) * (-lambda * (-b1).ln_1p()).exp_m1()
}

/// Risk-constrained bet for the game paying `P` with probability `pi` and
/// losing the stake otherwise. Either the Kelly bet, when it meets the
/// constraint, or a smaller fractional-Kelly bet on the constraint boundary
/// found by bisection on the increasing branch of the constraint function.
pub fn solve_two_outcome_rck(pi: f64, payoff: f64, lambda: f64, bisect_tol: f64) -> Result<BetVector> {
    let kelly = crate::kelly::solve_two_outcome(pi, payoff)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let bk = kelly.as_slice()[0];
    if lambda == 0.0 || bk == 0.0 || two_outcome_excess(pi, payoff, lambda, bk) <= 0.0 {
        return Ok(kelly);
    }
    // The constraint function is convex in b1, zero at 0 and decreasing
    // there; it increases past its minimizer, where the root lies.
    let c = ((1.0 - pi) / (pi * (payoff - 1.0))).powf(1.0 / (lambda + 1.0));
    let mut lo = ((1.0 - c) / (1.0 + c * (payoff - 1.0))).clamp(0.0, bk);
    let mut hi = bk;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = two_outcome_excess(pi, payoff, lambda, mid);
        if v <= 0.0 {
            lo = mid;
            if -v <= bisect_tol {
                break;
            }
        } else {
            hi = mid;
        }
    }
    BetVector::new(vec![lo, 1.0 - lo])
}

struct InnerSolver<'a> {
    model: &'a FiniteOutcomeModel,
    lambda: f64,
    domain: TruncatedSimplex,
    opts: PolishOptions,
    iterations: usize,
}

impl InnerSolver<'_> {
    fn solve(&mut self, kappa: f64, x0: Vec<f64>) -> Result<Vec<f64>> {
        let mut obj = Lagrangian::new(self.model, self.lambda, kappa);
        let out = polish(&mut obj, &self.domain, x0, self.opts)?;
        self.iterations += out.iterations;
        Ok(out.x)
    }
}

fn finite_report(
    model: &FiniteOutcomeModel,
    bet: BetVector,
    kappa: f64,
    lambda: f64,
    iterations: usize,
    config: &SolverConfig,
) -> SolveReport {
    let residuals = optimality_residual(model, &bet, kappa, lambda, config.support_tol);
    let kkt_residual = residuals.max();
    let risk = risk_value(model, &bet, lambda);
    let growth = model.growth(bet.as_slice());
    let eps_valid = bet.cash_weight() > config.eps;
    SolveReport {
        converged: kkt_residual <= config.kkt_tol && risk.mean <= 1.0 + config.kkt_tol,
        eps_valid,
        dual_cap_hit: kappa >= config.dual_cap,
        bet,
        kappa,
        lambda,
        growth,
        risk_value: risk,
        residuals,
        kkt_residual,
        iterations,
    }
}

pub(crate) fn cash_report(model: &FiniteOutcomeModel, lambda: f64, config: &SolverConfig) -> SolveReport {
    finite_report(model, BetVector::cash(model.n()), 0.0, lambda, 0, config)
}

/// Solves the risk-constrained problem on a finite (exact or empirical)
/// distribution with exact expectations.
///
/// `dual_cap_hit` reports `kappa >= M` for information; the finite solver
/// does not clip the dual variable.
pub fn solve_finite_rck(model: &FiniteOutcomeModel, lambda: f64, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if crate::kelly::detect_no_bet(model) {
        return Ok(cash_report(model, lambda, config));
    }
    let n = model.n();
    let domain = TruncatedSimplex::new(n, config.eps)?;
    let mut inner = InnerSolver {
        model,
        lambda,
        domain,
        opts: PolishOptions {
            max_iters: config.polish_iters,
            tol: (config.kkt_tol * 1e-3).max(1e-13),
            support_tol: config.support_tol,
        },
        iterations: 0,
    };

    let warm = averaged_descent(
        &mut Lagrangian::new(model, lambda, 0.0),
        &domain,
        BetVector::cash(n).into_inner(),
        config.schedule(),
        config.max_iters.min(WARMUP_ITERS),
    )?;
    inner.iterations += config.max_iters.min(WARMUP_ITERS);
    let b0 = inner.solve(0.0, warm)?;
    let excess0 = risk_excess(model, &b0, lambda);
    if lambda == 0.0 || excess0 <= 0.0 {
        let iters = inner.iterations;
        return Ok(finite_report(model, BetVector::from_projection(b0), 0.0, lambda, iters, config));
    }

    // Bracket kappa: lo infeasible, hi feasible.
    let mut lo = 0.0;
    let mut b_lo = b0;
    let mut hi = 1.0;
    let mut b_hi = inner.solve(hi, b_lo.clone())?;
    let mut excess_hi = risk_excess(model, &b_hi, lambda);
    while excess_hi > 0.0 {
        if hi >= KAPPA_SEARCH_MAX {
            let iters = inner.iterations;
            return Ok(finite_report(model, BetVector::from_projection(b_hi), hi, lambda, iters, config));
        }
        lo = hi;
        b_lo = b_hi.clone();
        hi *= 2.0;
        b_hi = inner.solve(hi, b_hi)?;
        excess_hi = risk_excess(model, &b_hi, lambda);
    }

    // Complementary slackness and the shift of the gradient condition both
    // scale with kappa times the constraint gap.
    let target = |kappa: f64| 1e-2 * config.kkt_tol / (1.0 + kappa * (1.0 + lambda));
    for _ in 0..KAPPA_BISECT_MAX {
        if -excess_hi <= target(hi) || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        // Start from whichever end is closer in kappa.
        let start = if mid - lo < hi - mid { b_lo.clone() } else { b_hi.clone() };
        let b_mid = inner.solve(mid, start)?;
        let e = risk_excess(model, &b_mid, lambda);
        if e <= 0.0 {
            hi = mid;
            b_hi = b_mid;
            excess_hi = e;
        } else {
            lo = mid;
            b_lo = b_mid;
        }
    }
    let iters = inner.iterations;
    Ok(finite_report(model, BetVector::from_projection(b_hi), hi, lambda, iters, config))
}

/// Result of a run of the primal-dual stochastic gradient method.
pub(crate) struct PrimalDualRun {
    pub bet: Vec<f64>,
    pub kappa: f64,
    pub eps_valid: bool,
    pub dual_cap_hit: bool,
}

/// The primal-dual stochastic gradient method with `t_k`-weighted averaging.
/// With `lambda = 0` the dual update has no effect on the primal step, and
/// the method is the projected stochastic gradient method for the Kelly
/// problem.
pub(crate) fn primal_dual(
    sampler: &dyn ReturnSampler,
    lambda: f64,
    config: &SolverConfig,
    b0: Vec<f64>,
    kappa0: f64,
) -> Result<PrimalDualRun> {
    let n = sampler.dim();
    let domain = TruncatedSimplex::new(n, config.eps)?;
    let schedule = config.schedule();
    let cap = config.dual_cap;
    let mut rng = substream(Namespace::Sampling, sampler.seed(), TRAIN_STREAM);
    let mut b = vec![0.0; n];
    domain.project_into(&b0, &mut b)?;
    let mut kappa = kappa0.clamp(0.0, cap);
    let mut batch = vec![0.0; config.batch_size * n];
    let mut grad = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut avg_b = vec![0.0; n];
    let mut avg_kappa = 0.0;
    let mut weight = 0.0;
    let inv_batch = 1.0 / config.batch_size as f64;
    for k in 1..=config.max_iters {
        for row in batch.chunks_exact_mut(n) {
            sampler.sample_into(&mut rng, row);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut risk = 0.0;
        for row in batch.chunks_exact(n) {
            let u = dot(row, &b);
            let w = if lambda == 0.0 { 1.0 } else { (-lambda * u.ln()).exp() };
            let coef = (1.0 + lambda * kappa * w) / u;
            for (g, r) in grad.iter_mut().zip(row) {
                *g += coef * r;
            }
            risk += w;
        }
        let t = schedule.step(k);
        for i in 0..n {
            avg_b[i] += t * b[i];
            z[i] = b[i] + t * grad[i] * inv_batch;
        }
        avg_kappa += t * kappa;
        weight += t;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stochastic gradient"));
        }
        domain.project_into(&z, &mut b)?;
        if lambda > 0.0 {
            kappa = (kappa + t * (risk * inv_batch - 1.0)).clamp(0.0, cap);
        }
    }
    let eps_valid = b[n - 1] > config.eps;
    let dual_cap_hit = kappa >= cap;
    if weight > 0.0 {
        avg_b.iter_mut().for_each(|v| *v /= weight);
        avg_kappa /= weight;
    } else {
        avg_b = b;
        avg_kappa = kappa;
    }
    let mut bet = vec![0.0; n];
    // A convex combination of simplex points; projection only removes rounding.
    domain.project_into(&avg_b, &mut bet)?;
    Ok(PrimalDualRun { bet, kappa: avg_kappa, eps_valid, dual_cap_hit })
}

pub(crate) fn warm_start(
    sampler: &dyn ReturnSampler,
    lambda: f64,
    config: &SolverConfig,
) -> Result<(Vec<f64>, f64)> {
    let n = sampler.dim();
    match config.warm_start {
        WarmStart::Cash => Ok((BetVector::cash(n).into_inner(), 0.0)),
        WarmStart::Qrck => {
            let moments = qrck::estimate_sampled_moments(sampler, config.moment_samples)?;
            let qp = qrck::solve_qrck(&moments, lambda, config)?;
            let kappa = if lambda > 0.0 { qp.kappa / lambda } else { 0.0 };
            Ok((qp.bet.into_inner(), kappa))
        }
    }
}

/// Evaluates a sampled solution on held-out draws.
pub(crate) fn sampled_report(
    sampler: &dyn ReturnSampler,
    run: PrimalDualRun,
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let eval = crate::model::Source::Sampler(sampler).evaluation_model(config.eval_samples)?;
    let bet = BetVector::from_projection(run.bet);
    let residuals = optimality_residual(&eval, &bet, run.kappa, lambda, config.support_tol);
    let kkt_residual = residuals.max();
    let risk = risk_value(&eval, &bet, lambda);
    let growth = eval.growth(bet.as_slice());
    Ok(SolveReport {
        converged: kkt_residual <= config.kkt_tol
            && risk.mean <= 1.0 + config.kkt_tol
            && !run.dual_cap_hit,
        eps_valid: run.eps_valid,
        dual_cap_hit: run.dual_cap_hit,
        bet,
        kappa: run.kappa,
        lambda,
        growth,
        risk_value: risk,
        residuals,
        kkt_residual,
        iterations: config.max_iters,
    })
}

/// Primal-dual stochastic gradient method on samples from `sampler`,
/// evaluated on a held-out batch of `eval_samples` draws.
pub fn solve_sampled_rck(
    sampler: &dyn ReturnSampler,
    n: usize,
    lambda: f64,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    if sampler.dim() != n {
        return Err(Error::Dimension { expected: n, got: sampler.dim() });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let (b0, kappa0) = warm_start(sampler, lambda, config)?;
    let run = primal_dual(sampler, lambda, config, b0, kappa0)?;
    sampled_report(sampler, run, lambda, config)
}
