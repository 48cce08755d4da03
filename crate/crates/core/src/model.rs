//! Return distributions, bet vectors and risk parameters.
//!
//! A [`FiniteOutcomeModel`] is a probability vector over `K` outcomes together
//! with a `K x n` matrix of nonnegative returns stored row-major by outcome.
//! The last column is the cash bet and is identically one. The same type also
//! carries empirical samples drawn from a [`ReturnSampler`] (uniform weights),
//! in which case expectations come with Monte Carlo standard errors.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{substream, Namespace, StreamRng, EVAL_STREAM};

const PROB_SUM_TOL: f64 = 1e-12;
const CASH_TOL: f64 = 1e-12;
const BET_SUM_TOL: f64 = 1e-9;

/// A scalar expectation together with its Monte Carlo standard error.
/// Exact finite-sum expectations have `std_err == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Estimate { mean, std_err: 0.0 }
    }

    /// Sample mean of IID draws with the standard error of the mean.
    pub fn of_samples(samples: &[f64]) -> Self {
        let count = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / count;
        if samples.len() < 2 {
            return Estimate::exact(mean);
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
        Estimate { mean, std_err: (var / count).sqrt() }
    }
}

/// Discrete return distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteOutcomeModel {
    probs: Vec<f64>,
    returns: Vec<f64>,
    n: usize,
    exact: bool,
}

/// On-disk problem file: `{"probs": [...], "returns": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub probs: Vec<f64>,
    pub returns: Vec<Vec<f64>>,
}

impl FiniteOutcomeModel {
    /// Builds a model from (possibly unnormalized) outcome weights and one
    /// return row per outcome.
    pub fn new(probs: Vec<f64>, returns: Vec<Vec<f64>>) -> Result<Self> {
        let n = returns.first().map_or(0, Vec::len);
        if let Some(row) = returns.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension { expected: n, got: row.len() });
        }
        let flat = returns.into_iter().flatten().collect();
        Self::from_flat(probs, flat, n)
    }

    /// Builds a model from a row-major `K x n` return matrix.
    pub fn from_flat(probs: Vec<f64>, returns: Vec<f64>, n: usize) -> Result<Self> {
        Self::build(probs, returns, n, true)
    }

    /// Equally weighted empirical distribution of `returns.len() / n` samples.
    pub fn empirical(returns: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || returns.len() % n != 0 {
            return Err(Error::InvalidModel("sample buffer is not a whole number of rows".into()));
        }
        let k = returns.len() / n;
        Self::build(vec![1.0; k], returns, n, false)
    }

    fn build(mut probs: Vec<f64>, mut returns: Vec<f64>, n: usize, exact: bool) -> Result<Self> {
        let k = probs.len();
        if k == 0 {
            return Err(Error::InvalidModel("need at least one outcome".into()));
        }
        if n < 2 {
            return Err(Error::InvalidModel(format!("need n >= 2 bets, got {n}")));
        }
        if returns.len() != k * n {
            return Err(Error::Dimension { expected: k * n, got: returns.len() });
        }
        if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidModel("outcome probabilities must be finite and positive".into()));
        }
        let total: f64 = probs.iter().sum();
        // Already-normalized input is kept bit-for-bit so files round-trip.
        if (total - 1.0).abs() > PROB_SUM_TOL {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        let total: f64 = probs.iter().sum();
        // Summation error grows with K; large empirical samples need the slack.
        if (total - 1.0).abs() > PROB_SUM_TOL.max(k as f64 * f64::EPSILON) {
            return Err(Error::InvalidModel(format!("probabilities sum to {total} after normalization")));
        }
        if returns.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidModel("returns must be finite and nonnegative".into()));
        }
        for (i, row) in returns.chunks_exact_mut(n).enumerate() {
            let cash = row[n - 1];
            if (cash - 1.0).abs() > CASH_TOL {
                return Err(Error::InvalidModel(format!(
                    "outcome {i}: cash return is {cash}, expected 1"
                )));
            }
            row[n - 1] = 1.0;
        }
        Ok(FiniteOutcomeModel { probs, returns, n, exact })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn outcomes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.returns[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.probs.iter().copied().zip(self.returns.chunks_exact(self.n))
    }

    /// `true` for an exact distribution, `false` for an empirical sample.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// `E r`, one entry per bet.
    pub fn expected_returns(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.n];
        for (p, row) in self.rows() {
            mean.iter_mut().zip(row).for_each(|(m, r)| *m += p * r);
        }
        mean
    }

    /// Per-outcome wealth factors `r_i' b`.
    pub fn wealth_factors(&self, b: &[f64]) -> Vec<f64> {
        self.returns.chunks_exact(self.n).map(|row| dot(row, b)).collect()
    }

    /// Weighted mean of a per-outcome quantity, with a standard error when
    /// the model is an empirical sample.
    pub fn expect(&self, values: &[f64]) -> Estimate {
        let mean: f64 = self.probs.iter().zip(values).map(|(p, v)| p * v).sum();
        if self.exact {
            return Estimate::exact(mean);
        }
        let k = values.len() as f64;
        if k < 2.0 || !mean.is_finite() {
            return Estimate { mean, std_err: if mean.is_finite() { 0.0 } else { f64::INFINITY } };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Estimate { mean, std_err: (var / k).sqrt() }
    }

    /// Expected log growth `E log(r'b)`.
    pub fn growth(&self, b: &[f64]) -> Estimate {
        let logs: Vec<f64> = self.wealth_factors(b).into_iter().map(f64::ln).collect();
        self.expect(&logs)
    }

    pub fn to_problem_file(&self) -> ProblemFile {
        ProblemFile {
            probs: self.probs.clone(),
            returns: self.returns.chunks_exact(self.n).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn from_problem_file(file: ProblemFile) -> Result<Self> {
        Self::new(file.probs, file.returns)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_problem_file(serde_json::from_str(s)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_problem_file())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json_string()?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// A point of the probability simplex. The last coordinate is cash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BetVector(Vec<f64>);

impl BetVector {
    pub fn new(b: Vec<f64>) -> Result<Self> {
        if b.len() < 2 {
            return Err(Error::InvalidBet(format!("need n >= 2 entries, got {}", b.len())));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("bet vector"));
        }
        if let Some(x) = b.iter().find(|x| **x < 0.0) {
            return Err(Error::InvalidBet(format!("negative entry {x}")));
        }
        let total: f64 = b.iter().sum();
        if (total - 1.0).abs() > BET_SUM_TOL {
            return Err(Error::InvalidBet(format!("entries sum to {total}")));
        }
        Ok(BetVector(b))
    }

    /// The no-bet vector `e_n`.
    pub fn cash(n: usize) -> Self {
        let mut b = vec![0.0; n.max(2)];
        *b.last_mut().unwrap() = 1.0;
        BetVector(b)
    }

    pub(crate) fn from_projection(b: Vec<f64>) -> Self {
        BetVector(b)
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cash_weight(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs_diff(&self, other: &BetVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for BetVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        BetVector::new(v)
    }
}

impl From<BetVector> for Vec<f64> {
    fn from(b: BetVector) -> Vec<f64> {
        b.0
    }
}

/// Drawdown limit: threshold `alpha`, probability cap `beta` and
/// risk-aversion `lambda = log(beta) / log(alpha)`. When built from `lambda`
/// alone, `alpha` and `beta` are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: f64,
}

impl RiskSpec {
    pub fn from_alpha_beta(alpha: f64, beta: f64) -> Result<Self> {
        let lambda = lambda_from_alpha_beta(alpha, beta)?;
        Ok(RiskSpec { alpha: Some(alpha), beta: Some(beta), lambda })
    }

    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        Ok(RiskSpec { alpha: None, beta: None, lambda })
    }
}

fn check_unit_open(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in (0, 1), got {x}")))
    }
}

pub fn lambda_from_alpha_beta(alpha: f64, beta: f64) -> Result<f64> {
    check_unit_open("alpha", alpha)?;
    check_unit_open("beta", beta)?;
    Ok(beta.ln() / alpha.ln())
}

/// Upper bound `alpha^lambda` on `Prob(W_min < alpha)` for a bet satisfying
/// the risk constraint at `lambda`.
pub fn cdf_bound(lambda: f64, alpha: f64) -> Result<f64> {
    check_unit_open("alpha", alpha)?;
    if !(lambda >= 0.0) {
        return Err(domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(alpha.powf(lambda))
}

/// `f * b + (1 - f) * e_n`.
pub fn fractional_kelly(kelly_bet: &BetVector, f: f64) -> Result<BetVector> {
    if !(0.0..=1.0).contains(&f) {
        return Err(domain(format!("fraction must lie in [0, 1], got {f}")));
    }
    let n = kelly_bet.n();
    let mut b: Vec<f64> = kelly_bet.as_slice().iter().map(|x| f * x).collect();
    b[n - 1] += 1.0 - f;
    BetVector::new(b)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Source of IID return vectors for distributions that are not finite.
///
/// Implementations write one vector per call into `out`; the last coordinate
/// must be exactly one. Batches drawn through [`ReturnSampler::draw`] are
/// keyed by `(seed, stream)` and are identical across calls.
pub trait ReturnSampler: Send + Sync {
    fn dim(&self) -> usize;

    fn seed(&self) -> u64;

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]);

    /// `count` vectors, row-major.
    fn draw(&self, count: usize, stream: u64) -> Vec<f64> {
        let n = self.dim();
        let mut rng = substream(Namespace::Sampling, self.seed(), stream);
        let mut out = vec![0.0; count * n];
        for row in out.chunks_exact_mut(n) {
            self.sample_into(&mut rng, row);
        }
        out
    }

    /// Empirical model over `count` fresh draws from `stream`.
    fn draw_model(&self, count: usize, stream: u64) -> Result<FiniteOutcomeModel> {
        FiniteOutcomeModel::empirical(self.draw(count, stream), self.dim())
    }
}

/// A finite model viewed as a sampler: draws outcome `i` with probability `pi_i`.
#[derive(Debug, Clone)]
pub struct FiniteSampler {
    model: FiniteOutcomeModel,
    cumulative: Vec<f64>,
    seed: u64,
}

impl FiniteSampler {
    pub fn new(model: FiniteOutcomeModel, seed: u64) -> Self {
        let mut acc = 0.0;
        let cumulative = model
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        FiniteSampler { model, cumulative, seed }
    }

    pub fn model(&self) -> &FiniteOutcomeModel {
        &self.model
    }

    pub(crate) fn sample_index(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative.partition_point(|c| *c <= u).min(self.cumulative.len() - 1)
    }
}

impl ReturnSampler for FiniteSampler {
    fn dim(&self) -> usize {
        self.model.n()
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) {
        out.copy_from_slice(self.model.row(self.sample_index(rng)));
    }
}

/// Either an exact finite distribution or a sampler.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    Model(&'a FiniteOutcomeModel),
    Sampler(&'a dyn ReturnSampler),
}

impl<'a> Source<'a> {
    pub fn dim(&self) -> usize {
        match self {
            Source::Model(m) => m.n(),
            Source::Sampler(s) => s.dim(),
        }
    }

    /// The model expectations are taken over: the model itself, or
    /// `samples` held-out draws from the evaluation stream of a sampler.
    pub fn evaluation_model(self, samples: usize) -> Result<Cow<'a, FiniteOutcomeModel>> {
        match self {
            Source::Model(m) => Ok(Cow::Borrowed(m)),
            Source::Sampler(s) => Ok(Cow::Owned(s.draw_model(samples, EVAL_STREAM)?)),
        }
    }
}
