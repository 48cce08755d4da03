//! Monte Carlo simulation of wealth trajectories.
//!
//! Wealth starts at `w_1 = 1` and evolves as `w_{t+1} = w_t (r_t'b)`. A plan
//! with horizon `T` draws `T - 1` return vectors per trajectory and records
//! the minimum wealth `W_min` over `t = 1..T`, the final log-wealth, and the
//! drawdown event `W_min < alpha` for each threshold in the grid.
//!
//! Trajectory `i` draws from the substream `(seed, stream_offset + i)` of the
//! simulation namespace, so a longer horizon extends the same paths and the
//! statistics do not depend on how trajectories are spread over threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{cdf_bound, dot, fractional_kelly, BetVector, Estimate, FiniteSampler, ReturnSampler, Source};
use crate::qrck;
use crate::rck;
use crate::rng::{substream, Namespace, GENERATOR};
use crate::solver::{SolveReport, SolverConfig};

pub const DEFAULT_TRAJECTORIES: usize = 10_000;
pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
/// Width, in binomial standard errors, of the allowance for sampling noise
/// when checking the drawdown bound.
pub const BOUND_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub trajectories: usize,
    pub horizon: usize,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
    pub stream_offset: u64,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        SimulationPlan {
            trajectories: DEFAULT_TRAJECTORIES,
            horizon: DEFAULT_HORIZON,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            seed: 0,
            stream_offset: 0,
        }
    }
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(domain("need at least one trajectory"));
        }
        if self.horizon == 0 {
            return Err(domain("horizon must be at least 1"));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(domain(format!("thresholds must lie in (0, 1), got {a}")));
        }
        Ok(())
    }
}

/// Empirical `Prob(W_min < alpha)` with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawdownRisk {
    pub alpha: f64,
    pub probability: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub plan: SimulationPlan,
    /// Minimum wealth of each trajectory, in trajectory order. Zero on ruin.
    pub wmin_samples: Vec<f64>,
    /// `log w_T` of each trajectory; negative infinity on ruin.
    pub final_log_wealth: Vec<f64>,
    pub drawdown_risk: Vec<DrawdownRisk>,
    /// Mean of `log w_T / (T - 1)`. `None` when `T = 1` or some trajectory
    /// was ruined.
    pub growth_estimate: Option<Estimate>,
    pub ruined: usize,
}

fn binomial(count: usize, total: usize) -> (f64, f64) {
    let p = count as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

impl TrajectoryStats {
    /// Sorted minimum-wealth samples: the support of the empirical CDF.
    pub fn cdf(&self) -> Vec<f64> {
        let mut s = self.wmin_samples.clone();
        s.sort_by(f64::total_cmp);
        s
    }

    /// Empirical `Prob(W_min < alpha)` with its standard error.
    pub fn risk_at(&self, alpha: f64) -> DrawdownRisk {
        let count = self.wmin_samples.iter().filter(|w| **w < alpha).count();
        let (probability, std_err) = binomial(count, self.wmin_samples.len());
        DrawdownRisk { alpha, probability, std_err }
    }

    pub fn summary(&self) -> StatsSummary {
        StatsSummary {
            generator: GENERATOR.to_string(),
            plan: self.plan.clone(),
            drawdown_risk: self.drawdown_risk.clone(),
            growth: self.growth_estimate,
            ruined: self.ruined,
        }
    }

    /// One row per trajectory: `index,wmin,final_log_wealth`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "wmin", "final_log_wealth"])?;
        for (i, (wmin, lw)) in self.wmin_samples.iter().zip(&self.final_log_wealth).enumerate() {
            w.write_record([i.to_string(), wmin.to_string(), lw.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Summary of a simulation for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub generator: String,
    pub plan: SimulationPlan,
    pub drawdown_risk: Vec<DrawdownRisk>,
    pub growth: Option<Estimate>,
    pub ruined: usize,
}

/// `(W_min, log w_T)` of one trajectory.
fn trajectory(sampler: &dyn ReturnSampler, b: &[f64], plan: &SimulationPlan, index: usize, row: &mut [f64]) -> (f64, f64) {
    let mut rng = substream(Namespace::Simulation, plan.seed, plan.stream_offset.wrapping_add(index as u64));
    let mut log_w = 0.0f64;
    let mut min_log = 0.0f64;
    for _ in 1..plan.horizon {
        sampler.sample_into(&mut rng, row);
        let u = dot(row, b);
        if !(u > 0.0) {
            return (0.0, f64::NEG_INFINITY);
        }
        log_w += u.ln();
        min_log = min_log.min(log_w);
    }
    (min_log.exp(), log_w)
}

/// Simulates `plan.trajectories` wealth paths of the bet `b`.
pub fn simulate(source: Source<'_>, b: &BetVector, plan: &SimulationPlan) -> Result<TrajectoryStats> {
    plan.validate()?;
    let n = source.dim();
    if b.n() != n {
        return Err(Error::Dimension { expected: n, got: b.n() });
    }
    let owned;
    let sampler: &dyn ReturnSampler = match source {
        Source::Model(m) => {
            owned = FiniteSampler::new(m.clone(), 0);
            &owned
        }
        Source::Sampler(s) => s,
    };
    let bet = b.as_slice();
    let paths: Vec<(f64, f64)> = (0..plan.trajectories)
        .into_par_iter()
        .map_init(|| vec![0.0; n], |row, i| trajectory(sampler, bet, plan, i, row))
        .collect();
    let (wmin_samples, final_log_wealth): (Vec<f64>, Vec<f64>) = paths.into_iter().unzip();
    let ruined = final_log_wealth.iter().filter(|l| l.is_infinite()).count();
    let growth_estimate = if plan.horizon > 1 && ruined == 0 {
        let scale = 1.0 / (plan.horizon - 1) as f64;
        let rates: Vec<f64> = final_log_wealth.iter().map(|l| l * scale).collect();
        Some(Estimate::of_samples(&rates))
    } else {
        None
    };
    let mut stats = TrajectoryStats {
        plan: plan.clone(),
        wmin_samples,
        final_log_wealth,
        drawdown_risk: Vec::new(),
        growth_estimate,
        ruined,
    };
    stats.drawdown_risk = plan.alpha_grid.iter().map(|a| stats.risk_at(*a)).collect();
    Ok(stats)
}

/// Comparison of the empirical drawdown risk with `alpha^lambda` at one
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub alpha: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
    /// `bound - empirical`.
    pub margin: f64,
    /// `empirical < bound + 3 std_err`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValidation {
    pub lambda: f64,
    pub checks: Vec<BoundCheck>,
    /// The empirical CDF of `W_min` stays below `min(1, x^lambda + 3 sigma)`
    /// at every sample point below one.
    pub cdf_dominated: bool,
    /// Largest value of `F(x) - x^lambda - 3 sigma` over the sample points.
    pub worst_cdf_excess: f64,
}

impl BoundValidation {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Checks `Prob(W_min < alpha) < alpha^lambda` on the threshold grid with an
/// allowance of three binomial standard errors. Violations are returned as
/// data.
pub fn validate_bound(stats: &TrajectoryStats, lambda: f64) -> Result<BoundValidation> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let mut checks = Vec::with_capacity(stats.drawdown_risk.len());
    for r in &stats.drawdown_risk {
        let bound = cdf_bound(lambda, r.alpha)?;
        checks.push(BoundCheck {
            alpha: r.alpha,
            empirical: r.probability,
            std_err: r.std_err,
            bound,
            margin: bound - r.probability,
            holds: r.probability < bound + BOUND_SIGMAS * r.std_err,
        });
    }
    // F is a step function and x^lambda is increasing, so the largest excess
    // on (w_j, w_{j+1}] is approached just to the right of w_j, where
    // F = #{W_min <= w_j}/N.
    let sorted = stats.cdf();
    let total = sorted.len();
    let mut worst = f64::NEG_INFINITY;
    for (j, w) in sorted.iter().enumerate() {
        if *w >= 1.0 {
            break;
        }
        if sorted.get(j + 1) == Some(w) {
            continue;
        }
        let (f, se) = binomial(j + 1, total);
        let allowance = (w.powf(lambda) + BOUND_SIGMAS * se).min(1.0);
        worst = worst.max(f - allowance);
    }
    Ok(BoundValidation { lambda, checks, cdf_dominated: worst < 0.0, worst_cdf_excess: worst })
}

/// One point of the growth/drawdown trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    /// `rck`, `qrck`, or `fractional`.
    pub method: String,
    /// `lambda` for the constrained methods, the fraction otherwise.
    pub param: f64,
    pub growth: f64,
    pub risk: f64,
    /// `alpha^lambda` when the bet satisfies the risk constraint.
    pub bound: Option<f64>,
    /// Standard error of `risk`.
    pub stderr: f64,
    pub converged: bool,
}

/// Options of a frontier sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSpec {
    pub lambdas: Vec<f64>,
    pub fractions: Vec<f64>,
    /// Threshold at which `risk` is reported.
    pub alpha: f64,
}

fn solve_rck(source: Source<'_>, lambda: f64, config: &SolverConfig) -> Result<SolveReport> {
    match source {
        Source::Model(m) => rck::solve_finite_rck(m, lambda, config),
        Source::Sampler(s) => rck::solve_sampled_rck(s, s.dim(), lambda, config),
    }
}

/// Solves RCK and QRCK for every `lambda` and forms the fractional Kelly
/// bets, simulates each with `plan`, and returns the rows sorted by risk.
/// Solver failures to converge are flagged in the rows.
pub fn frontier(
    source: Source<'_>,
    spec: &FrontierSpec,
    plan: &SimulationPlan,
    config: &SolverConfig,
) -> Result<Vec<FrontierRow>> {
    if spec.lambdas.is_empty() && spec.fractions.is_empty() {
        return Err(domain("frontier needs at least one lambda or fraction"));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(domain(format!("alpha must lie in (0, 1), got {}", spec.alpha)));
    }
    let eval = source.evaluation_model(config.eval_samples)?;
    let mut bets: Vec<(&str, f64, BetVector, bool, Option<f64>)> = Vec::new();
    let certified = |b: &BetVector, lambda: f64| -> Result<Option<f64>> {
        let risk = rck::risk_value(&eval, b, lambda).mean;
        Ok(if risk <= 1.0 + config.kkt_tol { Some(cdf_bound(lambda, spec.alpha)?) } else { None })
    };
    if !spec.lambdas.is_empty() {
        let moments = match source {
            Source::Model(m) => qrck::MomentEstimate::from_model(m),
            Source::Sampler(s) => qrck::estimate_sampled_moments(s, config.moment_samples)?,
        };
        for &lambda in &spec.lambdas {
            let r = solve_rck(source, lambda, config)?;
            let bound = certified(&r.bet, lambda)?;
            bets.push(("rck", lambda, r.bet, r.converged, bound));
            let q = qrck::solve_qrck(&moments, lambda, config)?;
            let bound = certified(&q.bet, lambda)?;
            bets.push(("qrck", lambda, q.bet, q.converged, bound));
        }
    }
    if !spec.fractions.is_empty() {
        let kelly = solve_rck(source, 0.0, config)?;
        for &f in &spec.fractions {
            let b = fractional_kelly(&kelly.bet, f)?;
            bets.push(("fractional", f, b, kelly.converged, None));
        }
    }
    let mut rows = Vec::with_capacity(bets.len());
    for (method, param, bet, converged, bound) in bets {
        let stats = simulate(source, &bet, plan)?;
        let risk = stats.risk_at(spec.alpha);
        rows.push(FrontierRow {
            method: method.to_string(),
            param,
            growth: stats.growth_estimate.map_or(f64::NEG_INFINITY, |g| g.mean),
            risk: risk.probability,
            bound,
            stderr: risk.std_err,
            converged,
        });
    }
    rows.sort_by(|a, b| a.risk.total_cmp(&b.risk));
    Ok(rows)
}

/// Frontier rows as CSV: `method,param,growth,risk,bound,stderr,converged`.
/// An absent bound is an empty field.
pub fn write_frontier_csv<W: Write>(rows: &[FrontierRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "param", "growth", "risk", "bound", "stderr", "converged"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.param.to_string(),
            r.growth.to_string(),
            r.risk.to_string(),
            r.bound.map_or(String::new(), |b| b.to_string()),
            r.stderr.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
