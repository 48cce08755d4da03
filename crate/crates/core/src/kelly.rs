//! The Kelly problem: maximize `E log(r'b)` over the probability simplex.

use crate::error::{domain, Error, Result};
use crate::model::{dot, BetVector, FiniteOutcomeModel, ReturnSampler};
use crate::rck::{self, primal_dual, sampled_report, warm_start};
use crate::solver::{SolveReport, SolverConfig};

/// Closed-form Kelly bet for the game paying `P` on a win (probability
/// `pi`) and nothing otherwise: `((pi P - 1)/(P - 1), (P - pi P)/(P - 1))`
/// when `pi P > 1`, else all cash.
pub fn solve_two_outcome(pi: f64, payoff: f64) -> Result<BetVector> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(domain(format!("win probability must lie in (0, 1), got {pi}")));
    }
    if !(payoff > 1.0 && payoff.is_finite()) {
        return Err(domain(format!("payoff must exceed 1, got {payoff}")));
    }
    if pi * payoff <= 1.0 {
        return Ok(BetVector::cash(2));
    }
    let b1 = (pi * payoff - 1.0) / (payoff - 1.0);
    BetVector::new(vec![b1, 1.0 - b1])
}

/// `true` when no risky bet has expected return above one, in which case
/// holding cash is optimal for both the Kelly and the risk-constrained
/// problem.
pub fn detect_no_bet(model: &FiniteOutcomeModel) -> bool {
    let mean = model.expected_returns();
    mean[..mean.len() - 1].iter().all(|m| *m <= 1.0)
}

/// Gradient `E r/(r'b)` of the growth rate.
pub fn growth_gradient(model: &FiniteOutcomeModel, b: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; model.n()];
    for (p, row) in model.rows() {
        let c = p / dot(row, b);
        g.iter_mut().zip(row).for_each(|(gi, r)| *gi += c * r);
    }
    g
}

/// Kelly bet on a finite distribution with exact expectations.
pub fn solve_finite(model: &FiniteOutcomeModel, config: &SolverConfig) -> Result<SolveReport> {
    rck::solve_finite_rck(model, 0.0, config)
}

/// Projected stochastic gradient method with averaging on samples from
/// `sampler`, evaluated on held-out draws.
pub fn solve_sampled(sampler: &dyn ReturnSampler, n: usize, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    if sampler.dim() != n {
        return Err(Error::Dimension { expected: n, got: sampler.dim() });
    }
    let (b0, _) = warm_start(sampler, 0.0, config)?;
    let run = primal_dual(sampler, 0.0, config, b0, 0.0)?;
    sampled_report(sampler, run, 0.0, config)
}
