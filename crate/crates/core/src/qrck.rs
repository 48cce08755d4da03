//! Quadratic approximation of the risk-constrained problem and its
//! Markowitz form.
//!
//! With the excess return `rho = r - 1`, `mu = E rho` and `S = E rho rho'`,
//! expanding `log(r'b)` and `(r'b)^-lambda` to second order in `rho'b` gives
//!
//! ```text
//! maximize    mu'b - (1/2) b'Sb
//! subject to  -mu'b + ((lambda+1)/2) b'Sb <= 0,  1'b = 1,  b >= 0,
//! ```
//!
//! where the constraint has been divided by `lambda`. Its multiplier `nu`
//! determines `eta = (1 + nu (lambda+1)) / (1 + nu)`, and the solution is a
//! Markowitz portfolio with risk aversion `gamma = eta / (1 - eta mu'b)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{dot, BetVector, Estimate, FiniteOutcomeModel, ReturnSampler, Source};
use crate::rng::{substream, Namespace, MOMENT_STREAM};
use crate::simplex::TruncatedSimplex;
use crate::solver::{polish, simplex_stationarity, KktResiduals, Objective, PolishOptions, SolveReport, SolverConfig};

const MOMENT_TOL: f64 = 1e-10;
const BISECT_MAX: usize = 200;
/// `eta mu'b` within this relative distance of one is reported as an
/// arbitrage.
const ARBITRAGE_TOL: f64 = 1e-6;

/// First and second moments of the excess return `rho = r - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentsFile", into = "MomentsFile")]
pub struct MomentEstimate {
    n: usize,
    mu: Vec<f64>,
    /// Raw second moment `E rho rho'`, row-major.
    s: Vec<f64>,
    /// Covariance, row-major.
    sigma: Vec<f64>,
    sample_count: usize,
}

/// On-disk form: `{"mu": [...], "sigma": [row-major], "sample_count": N}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentsFile {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sample_count: usize,
}

impl MomentEstimate {
    /// Builds the estimate from a mean and covariance, enforcing symmetry
    /// and the zero cash row.
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>, sample_count: usize) -> Result<Self> {
        let n = mu.len();
        if n < 2 {
            return Err(Error::InvalidModel(format!("need n >= 2 bets, got {n}")));
        }
        if sigma.len() != n * n {
            return Err(Error::Dimension { expected: n * n, got: sigma.len() });
        }
        if mu.iter().chain(&sigma).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("moments"));
        }
        let scale = sigma.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..n {
            for j in 0..i {
                if (sigma[i * n + j] - sigma[j * n + i]).abs() > MOMENT_TOL * scale {
                    return Err(Error::InvalidModel("covariance is not symmetric".into()));
                }
            }
            if sigma[i * n + i] < -MOMENT_TOL * scale {
                return Err(Error::InvalidModel("covariance has a negative variance".into()));
            }
        }
        if mu[n - 1].abs() > MOMENT_TOL || (0..n).any(|j| sigma[(n - 1) * n + j].abs() > MOMENT_TOL * scale) {
            return Err(Error::InvalidModel("cash must have zero excess return and variance".into()));
        }
        Ok(Self::assemble(mu, sigma, sample_count))
    }

    fn assemble(mut mu: Vec<f64>, mut sigma: Vec<f64>, sample_count: usize) -> Self {
        let n = mu.len();
        for i in 0..n {
            for j in 0..i {
                let avg = 0.5 * (sigma[i * n + j] + sigma[j * n + i]);
                sigma[i * n + j] = avg;
                sigma[j * n + i] = avg;
            }
        }
        mu[n - 1] = 0.0;
        for j in 0..n {
            sigma[(n - 1) * n + j] = 0.0;
            sigma[j * n + n - 1] = 0.0;
        }
        let mut s = sigma.clone();
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] += mu[i] * mu[j];
            }
        }
        MomentEstimate { n, mu, s, sigma, sample_count }
    }

    /// Exact moments of a finite distribution (probability-weighted for
    /// empirical samples too).
    pub fn from_model(model: &FiniteOutcomeModel) -> Self {
        let n = model.n();
        let mut mu = vec![0.0; n];
        for (p, row) in model.rows() {
            for j in 0..n {
                mu[j] += p * (row[j] - 1.0);
            }
        }
        let mut sigma = vec![0.0; n * n];
        for (p, row) in model.rows() {
            for i in 0..n {
                let di = row[i] - 1.0 - mu[i];
                for j in 0..=i {
                    sigma[i * n + j] += p * di * (row[j] - 1.0 - mu[j]);
                }
            }
        }
        mirror_lower(&mut sigma, n);
        let count = if model.is_exact() { 0 } else { model.outcomes() };
        Self::assemble(mu, sigma, count)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.s
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Number of samples behind the estimate; zero for exact moments.
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
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

    fn quad(&self, m: &[f64], b: &[f64]) -> f64 {
        m.chunks_exact(self.n).zip(b).map(|(row, bi)| bi * dot(row, b)).sum()
    }
}

impl TryFrom<MomentsFile> for MomentEstimate {
    type Error = Error;
    fn try_from(f: MomentsFile) -> Result<Self> {
        MomentEstimate::new(f.mu, f.sigma, f.sample_count)
    }
}

impl From<MomentEstimate> for MomentsFile {
    fn from(m: MomentEstimate) -> Self {
        MomentsFile { mu: m.mu, sigma: m.sigma, sample_count: m.sample_count }
    }
}

fn mirror_lower(m: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            m[j * n + i] = m[i * n + j];
        }
    }
}

/// Moments of a finite model (exact) or of `sample_count` draws from a
/// sampler.
pub fn estimate_moments(source: Source<'_>, sample_count: usize) -> Result<MomentEstimate> {
    match source {
        Source::Model(m) => Ok(MomentEstimate::from_model(m)),
        Source::Sampler(s) => estimate_sampled_moments(s, sample_count),
    }
}

/// Streaming (Welford) mean and covariance of `sample_count` draws from the
/// moment stream of `sampler`.
pub fn estimate_sampled_moments(sampler: &dyn ReturnSampler, sample_count: usize) -> Result<MomentEstimate> {
    if sample_count == 0 {
        return Err(domain("moment estimation needs at least one sample"));
    }
    let n = sampler.dim();
    let mut rng = substream(Namespace::Sampling, sampler.seed(), MOMENT_STREAM);
    let mut r = vec![0.0; n];
    let mut mean = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut m2 = vec![0.0; n * n];
    for k in 1..=sample_count {
        sampler.sample_into(&mut rng, &mut r);
        let inv = 1.0 / k as f64;
        for j in 0..n {
            delta[j] = r[j] - 1.0 - mean[j];
            mean[j] += delta[j] * inv;
        }
        for i in 0..n {
            let after = r[i] - 1.0 - mean[i];
            for j in 0..=i {
                m2[i * n + j] += after * delta[j];
            }
        }
    }
    mirror_lower(&mut m2, n);
    let inv = 1.0 / sample_count as f64;
    m2.iter_mut().for_each(|x| *x *= inv);
    Ok(MomentEstimate::assemble(mean, m2, sample_count))
}

/// `-mu'b + (q/2) b'Mb`.
struct Quadratic<'a> {
    n: usize,
    mu: &'a [f64],
    m: &'a [f64],
    q: f64,
}

impl Objective for Quadratic<'_> {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut f = 0.0;
        for (i, row) in self.m.chunks_exact(self.n).enumerate() {
            let mx = dot(row, x);
            grad[i] = -self.mu[i] + self.q * mx;
            f += x[i] * (-self.mu[i] + 0.5 * self.q * mx);
        }
        f
    }
}

fn minimize_quadratic(
    mu: &[f64],
    m: &[f64],
    q: f64,
    x0: Vec<f64>,
    config: &SolverConfig,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = mu.len();
    let domain = TruncatedSimplex::new(n, 0.0)?;
    let mut obj = Quadratic { n, mu, m, q };
    let out = polish(
        &mut obj,
        &domain,
        x0,
        PolishOptions {
            max_iters: config.polish_iters,
            tol: (config.kkt_tol * 1e-3).max(1e-14),
            support_tol: config.support_tol,
        },
    )?;
    Ok((out.x, out.iterations, out.stationarity))
}

/// The quadratic approximation at `lambda`. `report.kappa` is the
/// multiplier `nu` of the constraint `-mu'b + ((lambda+1)/2) b'Sb <= 0`;
/// `growth` and `risk_value` hold the quadratic approximations
/// `mu'b - b'Sb/2` and `1 - lambda mu'b + (lambda(lambda+1)/2) b'Sb`.
/// When the objective is flat the solver returns `e_n`.
pub fn solve_qrck(moments: &MomentEstimate, lambda: f64, config: &SolverConfig) -> Result<SolveReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let n = moments.n;
    let mu = &moments.mu;
    let s = &moments.s;
    let constraint = |b: &[f64]| -dot(mu, b) + 0.5 * (lambda + 1.0) * moments.quad(s, b);

    // Minimizing -mu'b + (eta/2) b'Sb is the Lagrangian divided by 1 + nu;
    // eta runs over [1, lambda + 1) as nu runs over [0, inf).
    let mut iterations = 0;
    let (mut b, it, _) = minimize_quadratic(mu, s, 1.0, BetVector::cash(n).into_inner(), config)?;
    iterations += it;
    let mut eta = 1.0;
    if lambda > 0.0 && constraint(&b) > 0.0 {
        let (mut lo, mut hi) = (1.0, lambda + 1.0);
        let (mut b_hi, it, _) = minimize_quadratic(mu, s, hi, b.clone(), config)?;
        iterations += it;
        let scale = 1.0 + moments.quad(s, &b_hi).abs();
        for _ in 0..BISECT_MAX {
            let c_hi = constraint(&b_hi);
            if (c_hi <= 0.0 && -c_hi <= 1e-3 * config.kkt_tol * scale) || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (b_mid, it, _) = minimize_quadratic(mu, s, mid, b_hi.clone(), config)?;
            iterations += it;
            if constraint(&b_mid) <= 0.0 {
                hi = mid;
                b_hi = b_mid;
            } else {
                lo = mid;
            }
        }
        eta = hi;
        b = b_hi;
    }
    let nu = if lambda > 0.0 && eta < lambda + 1.0 { (eta - 1.0) / (lambda + 1.0 - eta) } else { 0.0 };

    let mut obj = Quadratic { n, mu, m: s, q: eta };
    let mut grad = vec![0.0; n];
    obj.eval(&b, &mut grad);
    let stationarity = simplex_stationarity(&b, &grad, 0.0, config.support_tol);
    let c = if lambda > 0.0 { constraint(&b) } else { 0.0 };
    let residuals = KktResiduals { feasibility: c.max(0.0), slackness: (nu * c).abs(), stationarity };
    let kkt_residual = residuals.max();
    let quad = moments.quad(s, &b);
    let mub = dot(mu, &b);
    Ok(SolveReport {
        bet: BetVector::from_projection(b),
        kappa: nu,
        lambda,
        growth: Estimate::exact(mub - 0.5 * quad),
        risk_value: Estimate::exact(1.0 - lambda * mub + 0.5 * lambda * (lambda + 1.0) * quad),
        residuals,
        kkt_residual,
        iterations,
        converged: kkt_residual <= config.kkt_tol,
        eps_valid: true,
        dual_cap_hit: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkowitzSolution {
    pub bet: BetVector,
    pub gamma: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `maximize mu'b - (gamma/2) b'Sigma b` over the probability simplex.
pub fn solve_markowitz(moments: &MomentEstimate, gamma: f64, config: &SolverConfig) -> Result<MarkowitzSolution> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(domain(format!("gamma must be finite and nonnegative, got {gamma}")));
    }
    let n = moments.n;
    let (b, iterations, stat) =
        minimize_quadratic(&moments.mu, &moments.sigma, gamma, BetVector::cash(n).into_inner(), config)?;
    Ok(MarkowitzSolution {
        bet: BetVector::from_projection(b),
        gamma,
        kkt_residual: stat,
        iterations,
        converged: stat <= config.kkt_tol,
    })
}

/// Risk aversion `gamma = eta / (1 - eta mu'b)` of the Markowitz problem
/// whose solution is the given quadratic solution. Fails when
/// `eta mu'b >= 1`, which the moments can only produce if they admit an
/// arbitrage.
pub fn markowitz_gamma_of_qrck(report: &SolveReport, moments: &MomentEstimate) -> Result<f64> {
    let nu = report.kappa;
    let lambda = report.lambda;
    let eta = if nu.is_finite() { (1.0 + nu * (lambda + 1.0)) / (1.0 + nu) } else { lambda + 1.0 };
    let eta_mu_b = eta * dot(&moments.mu, report.bet.as_slice());
    if eta_mu_b >= 1.0 - ARBITRAGE_TOL {
        return Err(Error::NoArbitrage { eta_mu_b });
    }
    Ok(eta / (1.0 - eta_mu_b))
}
