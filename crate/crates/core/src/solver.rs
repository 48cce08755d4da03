//! Configuration, reports and the projected-gradient machinery shared by the
//! Kelly, RCK and quadratic solvers.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{BetVector, Estimate};
use crate::simplex::TruncatedSimplex;

/// Starting point of the sampled solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// `b = e_n`, `kappa = 0`.
    Cash,
    /// The quadratic approximation's bet and multiplier, computed from
    /// moments estimated on a separate sample.
    Qrck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Cash floor of the truncated simplex.
    pub eps: f64,
    /// Upper clip `M` of the dual iterate in the primal-dual method.
    pub dual_cap: f64,
    /// `C` in the step size `t_k = C / sqrt(k)`.
    pub step_constant: f64,
    /// Iterations of the stochastic methods and of the averaged warm-up of
    /// the deterministic ones.
    pub max_iters: usize,
    pub batch_size: usize,
    pub kkt_tol: f64,
    pub bisect_tol: f64,
    /// `b_i > support_tol` counts as a strictly positive weight in the
    /// optimality conditions.
    pub support_tol: f64,
    /// Iteration cap of each accelerated polishing run.
    pub polish_iters: usize,
    /// Held-out samples used to evaluate sampled solutions.
    pub eval_samples: usize,
    /// Samples used to estimate moments for the quadratic warm start.
    pub moment_samples: usize,
    pub warm_start: WarmStart,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps: 1e-6,
            dual_cap: 100.0,
            step_constant: 1.0,
            max_iters: 10_000,
            batch_size: 100,
            kkt_tol: 1e-6,
            bisect_tol: 1e-12,
            support_tol: 1e-6,
            polish_iters: 50_000,
            eval_samples: 100_000,
            moment_samples: 100_000,
            warm_start: WarmStart::Qrck,
        }
    }
}

impl SolverConfig {
    /// Defaults for the sampled solvers, whose residuals are Monte Carlo
    /// estimates and cannot meet the finite-sum tolerance. Averaged iterates
    /// keep small positive weights on bets that are zero at the optimum, so
    /// the support threshold is raised to match the attainable accuracy.
    pub fn sampled() -> Self {
        SolverConfig { kkt_tol: 1e-2, support_tol: 1e-2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(domain(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.dual_cap > 0.0 && self.dual_cap.is_finite()) {
            return Err(domain(format!("dual cap must be positive, got {}", self.dual_cap)));
        }
        if !(self.step_constant > 0.0 && self.step_constant.is_finite()) {
            return Err(domain(format!("step constant must be positive, got {}", self.step_constant)));
        }
        for (name, v) in [
            ("kkt_tol", self.kkt_tol),
            ("bisect_tol", self.bisect_tol),
            ("support_tol", self.support_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 || self.eval_samples < 2 || self.moment_samples < 2 {
            return Err(domain("batch and sample counts must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule { constant: self.step_constant }
    }
}

/// Diminishing step sizes `t_k = C / sqrt(k)`: `t_k -> 0` and the series
/// diverges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub constant: f64,
}

impl StepSchedule {
    /// Step for iteration `k >= 1`.
    pub fn step(&self, k: usize) -> f64 {
        self.constant / (k.max(1) as f64).sqrt()
    }
}

/// Violations of the optimality conditions of the risk-constrained problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `max(E (r'b)^-lambda - 1, 0)`.
    pub feasibility: f64,
    /// `|kappa (E (r'b)^-lambda - 1)|`.
    pub slackness: f64,
    /// Largest violation of the gradient conditions against `1 + kappa lambda`.
    pub stationarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        // NaN propagates as a failure rather than being swallowed by `max`.
        let parts = [self.feasibility, self.slackness, self.stationarity];
        if parts.iter().any(|x| x.is_nan()) {
            return f64::INFINITY;
        }
        parts.into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub bet: BetVector,
    pub kappa: f64,
    pub lambda: f64,
    /// Expected log growth `E log(r'b)`, exact or held-out estimate.
    pub growth: Estimate,
    /// `E (r'b)^-lambda`, exact or held-out estimate.
    pub risk_value: Estimate,
    pub residuals: KktResiduals,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The cash weight stayed strictly above the floor, so the floor did
    /// not bind.
    pub eps_valid: bool,
    /// The dual iterate reached the cap `M`.
    pub dual_cap_hit: bool,
}

/// A smooth convex objective over the truncated simplex.
pub(crate) trait Objective {
    /// Value and gradient at `x`; `+inf` outside the domain of the function.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Stationarity of `x` for minimizing over the truncated simplex with
/// gradient `grad`: the spread of `-grad` across the support plus any
/// off-support component that exceeds it. Zero exactly at a minimizer.
pub(crate) fn simplex_stationarity(x: &[f64], grad: &[f64], eps: f64, support_tol: f64) -> f64 {
    let n = x.len();
    let (mut lo, mut hi, mut off) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let g = -grad[i];
        let floor = if i == n - 1 { eps } else { 0.0 };
        if x[i] > floor + support_tol {
            lo = lo.min(g);
            hi = hi.max(g);
        } else if i != n - 1 || eps == 0.0 {
            off = off.max(g);
        }
    }
    if !lo.is_finite() {
        // Everything sits at its lower bound: only the floored cash weight
        // carries mass, and any multiplier works.
        return 0.0;
    }
    let top = hi.max(off);
    let r = 0.5 * (top - lo);
    if r.is_nan() {
        f64::INFINITY
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PolishOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub support_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct PolishOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub stationarity: f64,
}

/// Accelerated projected gradient with backtracking on the Lipschitz
/// estimate and adaptive momentum restarts. `x0` must be feasible with a
/// finite objective.
pub(crate) fn polish<O: Objective>(
    obj: &mut O,
    domain: &TruncatedSimplex,
    x0: Vec<f64>,
    opts: PolishOptions,
) -> Result<PolishOutcome> {
    let n = x0.len();
    let eps = domain.eps();
    let mut x = x0;
    let mut gx = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut gx);
    if !fx.is_finite() {
        return Err(domain_err("starting point has a non-finite objective"));
    }
    let mut stat = simplex_stationarity(&x, &gx, eps, opts.support_tol);
    if stat <= opts.tol {
        return Ok(PolishOutcome { x, iterations: 0, stationarity: stat });
    }
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut fy = fx;
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut z = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut x_prev = vec![0.0; n];

    let mut gxn = vec![0.0; n];
    let mut iterations = 0;
    for k in 1..=opts.max_iters {
        iterations = k;
        // Backtracking: accept L once the new point lies below the quadratic
        // model at y, or once the gradient change along the step is within L.
        // The second test stays meaningful when function values have lost
        // their precision.
        let accepted = loop {
            for i in 0..n {
                z[i] = y[i] - gy[i] / lip;
            }
            domain.project_into(&z, &mut xn)?;
            let f_new = obj.eval(&xn, &mut gxn);
            let (mut lin, mut sq, mut curv) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let d = xn[i] - y[i];
                lin += gy[i] * d;
                sq += d * d;
                curv += (gxn[i] - gy[i]) * d;
            }
            if sq == 0.0 {
                break Some(f_new);
            }
            let slack = 1e-14 * (1.0 + fy.abs());
            if f_new.is_finite() && (f_new <= fy + lin + 0.5 * lip * sq + slack || curv <= lip * sq) {
                break Some(f_new);
            }
            lip *= 2.0;
            if lip > 1e300 {
                break None;
            }
        };
        // Steps no longer resolve in floating point.
        let Some(fxn) = accepted else { break };

        if fxn > fx && t > 1.0 {
            // Function restart: drop the momentum and retry from x.
            t = 1.0;
            y.copy_from_slice(&x);
            gy.copy_from_slice(&gx);
            fy = fx;
            continue;
        }

        x_prev.copy_from_slice(&x);
        x.copy_from_slice(&xn);
        gx.copy_from_slice(&gxn);
        fx = fxn;
        stat = simplex_stationarity(&x, &gx, eps, opts.support_tol);
        if stat <= opts.tol {
            return Ok(PolishOutcome { x, iterations: k, stationarity: stat });
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        // Gradient restart when the step and the momentum disagree.
        let mut align = 0.0;
        for i in 0..n {
            align += (y[i] - x[i]) * (x[i] - x_prev[i]);
        }
        if align > 0.0 || beta == 0.0 {
            t = 1.0;
            y.copy_from_slice(&x);
            gy.copy_from_slice(&gx);
            fy = fx;
        } else {
            t = t_next;
            for i in 0..n {
                y[i] = x[i] + beta * (x[i] - x_prev[i]);
            }
            fy = obj.eval(&y, &mut gy);
            if !fy.is_finite() {
                t = 1.0;
                y.copy_from_slice(&x);
                gy.copy_from_slice(&gx);
                fy = fx;
            }
        }
        lip *= 0.9;
    }
    Ok(PolishOutcome { x, iterations, stationarity: stat })
}

/// The averaged projected gradient method with exact gradients:
/// `b <- Pi(b - t_k grad)`, returning the `t_k`-weighted average of the
/// iterates.
pub(crate) fn averaged_descent<O: Objective>(
    obj: &mut O,
    domain: &TruncatedSimplex,
    x0: Vec<f64>,
    schedule: StepSchedule,
    iters: usize,
) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut avg = vec![0.0; n];
    let mut weight = 0.0;
    for k in 1..=iters {
        let f = obj.eval(&x, &mut g);
        if !f.is_finite() {
            break;
        }
        let t = schedule.step(k);
        for i in 0..n {
            avg[i] += t * x[i];
            z[i] = x[i] - t * g[i];
        }
        weight += t;
        domain.project_into(&z, &mut x)?;
    }
    if weight == 0.0 {
        return Ok(x);
    }
    avg.iter_mut().for_each(|a| *a /= weight);
    // Renormalize away rounding so the average is exactly a simplex point.
    domain.project_into(&avg.clone(), &mut avg)?;
    Ok(avg)
}

fn domain_err(msg: &str) -> crate::error::Error {
    domain(msg.to_string())
}
