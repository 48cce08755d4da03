//! Reproducible problem instances.
//!
//! All generators draw from the `Instance` random namespace, so an instance
//! seed never shares a stream with solver sampling or simulation.

use nalgebra::DMatrix;
use rand::distributions::{Distribution, Open01, Uniform};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{FiniteOutcomeModel, ReturnSampler};
use crate::rng::{substream, Namespace, StreamRng};

pub const FINITE_DEFAULT_N: usize = 20;
pub const FINITE_DEFAULT_K: usize = 100;
pub const LOW_RETURN: f64 = 0.2;
pub const HIGH_RETURN: f64 = 2.0;

/// Number of cells set to each extreme value: 30 for the default 100 x 19
/// risky cells, scaled with the cell count otherwise, and at least one.
pub fn extreme_count(n: usize, k: usize) -> usize {
    let cells = (k * (n - 1)) as f64;
    ((30.0 * cells / 1900.0).round() as usize).max(1)
}

/// Random finite instance: outcome weights uniform on `(0, 1)` and then
/// normalized, risky returns uniform on `[0.7, 1.3]`, and two disjoint
/// random sets of `extreme_count(n, k)` risky cells set to 0.2 and 2.
pub fn gen_finite(n: usize, k: usize, seed: u64) -> Result<FiniteOutcomeModel> {
    if n < 2 || k < 1 {
        return Err(domain(format!("need n >= 2 and K >= 1, got n = {n}, K = {k}")));
    }
    let cells = k * (n - 1);
    let count = extreme_count(n, k);
    if 2 * count > cells {
        return Err(domain(format!("{cells} risky cells cannot hold {} extreme returns", 2 * count)));
    }
    let mut rng = substream(Namespace::Instance, seed, 0);
    let probs: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Open01)).collect();
    let body = Uniform::new_inclusive(0.7, 1.3);
    let mut risky: Vec<f64> = (0..cells).map(|_| body.sample(&mut rng)).collect();
    let picked = index::sample(&mut rng, cells, 2 * count);
    for (pos, cell) in picked.into_iter().enumerate() {
        risky[cell] = if pos < count { LOW_RETURN } else { HIGH_RETURN };
    }
    let mut returns = Vec::with_capacity(k * n);
    for row in risky.chunks_exact(n - 1) {
        returns.extend_from_slice(row);
        returns.push(1.0);
    }
    FiniteOutcomeModel::from_flat(probs, returns, n)
}

/// Probability that a return vector of a default-size finite instance
/// contains at least one extreme cell: `1 - (1 - 2c/(K(n-1)))^(n-1)`.
pub fn extreme_row_probability(n: usize, k: usize) -> f64 {
    let cells = (k * (n - 1)) as f64;
    let c = 2.0 * extreme_count(n, k) as f64;
    1.0 - (1.0 - c / cells).powi((n - 1) as i32)
}

/// The game paying `P` with probability `pi` and nothing otherwise, next to
/// cash: rows `(P, 1)` and `(0, 1)`.
pub fn gen_two_outcome(pi: f64, payoff: f64) -> Result<FiniteOutcomeModel> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(domain(format!("win probability must lie in (0, 1), got {pi}")));
    }
    if !(payoff > 0.0 && payoff.is_finite()) {
        return Err(domain(format!("payoff must be positive, got {payoff}")));
    }
    FiniteOutcomeModel::new(vec![pi, 1.0 - pi], vec![vec![payoff, 1.0], vec![0.0, 1.0]])
}

/// Random finite instance with every return in `[1 - spread, 1 + spread]`,
/// where the quadratic expansion around `r'b = 1` is accurate. Each risky
/// column has independent noise of variance `v` and is shifted so its mean
/// is `1 + drift_i` with `drift_i` uniform on `[-v/2, v]`, which keeps the
/// optimal bets away from the vertices.
pub fn gen_near_unity(n: usize, k: usize, spread: f64, seed: u64) -> Result<FiniteOutcomeModel> {
    if n < 2 || k < 2 {
        return Err(domain(format!("need n >= 2 and K >= 2, got n = {n}, K = {k}")));
    }
    if !(spread > 0.0 && spread < 1.0) {
        return Err(domain(format!("spread must lie in (0, 1), got {spread}")));
    }
    let mut rng = substream(Namespace::Instance, seed, 2);
    let probs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.0)).collect();
    let total: f64 = probs.iter().sum();
    let noise = 0.6 * spread;
    let var = noise * noise / 3.0;
    let mut cols = vec![vec![0.0; k]; n - 1];
    for col in cols.iter_mut() {
        for x in col.iter_mut() {
            *x = rng.gen_range(-noise..noise);
        }
        let mean: f64 = col.iter().zip(&probs).map(|(x, p)| x * p).sum::<f64>() / total;
        let drift = rng.gen_range(-0.5 * var..var);
        for x in col.iter_mut() {
            *x = (1.0 + drift + *x - mean).clamp(1.0 - spread, 1.0 + spread);
        }
    }
    let mut returns = Vec::with_capacity(k * n);
    for i in 0..k {
        returns.extend(cols.iter().map(|c| c[i]));
        returns.push(1.0);
    }
    FiniteOutcomeModel::from_flat(probs, returns, n)
}

/// Version tag of the mixture parameter recipe.
pub const MIXTURE_VERSION: &str = "mixture-v1";
const MIXTURE_MEAN_RANGE: f64 = 0.05;
const MIXTURE_SPECTRAL_CAP: f64 = 0.05;

/// Two-component lognormal mixture: with probability 1/2 each,
/// `log r ~ N(nu_k, Sigma_k)`, with the cash coordinate fixed at one.
///
/// Parameters (`mixture-v1`): risky entries of `nu_k` uniform on
/// `[-0.05, 0.05]`; `Sigma_k = Q_k diag(d_k) Q_k'` with `Q_k` a random
/// orthogonal matrix and eigenvalues `d_k` uniform on `[0, 0.05]`, so the
/// spectral norm is at most 0.05.
#[derive(Debug, Clone)]
pub struct LognormalMixture {
    n: usize,
    seed: u64,
    means: [Vec<f64>; 2],
    /// Row-major `(n-1) x (n-1)` factors with `Sigma_k = F_k F_k'`.
    factors: [Vec<f64>; 2],
}

/// Serializable description of a generated sampler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: String,
    pub n: usize,
    pub seed: u64,
    pub version: String,
}

impl LognormalMixture {
    pub fn means(&self, component: usize) -> &[f64] {
        &self.means[component]
    }

    /// Covariance of `log r` in component `k`, row-major over the risky bets.
    pub fn covariance(&self, component: usize) -> Vec<f64> {
        let m = self.n - 1;
        let f = DMatrix::from_row_slice(m, m, &self.factors[component]);
        let s = &f * f.transpose();
        (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| s[(i, j)]).collect()
    }

    pub fn spec(&self) -> SamplerSpec {
        SamplerSpec {
            kind: "mixture".into(),
            n: self.n,
            seed: self.seed,
            version: MIXTURE_VERSION.into(),
        }
    }

    pub fn from_spec(spec: &SamplerSpec) -> Result<Self> {
        if spec.kind != "mixture" {
            return Err(Error::InvalidModel(format!("unknown sampler kind {:?}", spec.kind)));
        }
        if spec.version != MIXTURE_VERSION {
            return Err(Error::InvalidModel(format!("unsupported mixture recipe {:?}", spec.version)));
        }
        gen_lognormal_mixture(spec.n, spec.seed)
    }
}

fn random_factor(rng: &mut StreamRng, m: usize) -> Vec<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let d: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..=MIXTURE_SPECTRAL_CAP)).collect();
    let mut f = Vec::with_capacity(m * m);
    for i in 0..m {
        for (j, dj) in d.iter().enumerate() {
            f.push(q[(i, j)] * dj.sqrt());
        }
    }
    f
}

pub fn gen_lognormal_mixture(n: usize, seed: u64) -> Result<LognormalMixture> {
    if n < 2 {
        return Err(domain(format!("need n >= 2 bets, got {n}")));
    }
    let m = n - 1;
    let mut rng = substream(Namespace::Instance, seed, 1);
    let mean = |rng: &mut StreamRng| -> Vec<f64> {
        (0..m).map(|_| rng.gen_range(-MIXTURE_MEAN_RANGE..=MIXTURE_MEAN_RANGE)).collect()
    };
    let m1 = mean(&mut rng);
    let m2 = mean(&mut rng);
    let f1 = random_factor(&mut rng, m);
    let f2 = random_factor(&mut rng, m);
    Ok(LognormalMixture { n, seed, means: [m1, m2], factors: [f1, f2] })
}

impl ReturnSampler for LognormalMixture {
    fn dim(&self) -> usize {
        self.n
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let m = self.n - 1;
        let k = usize::from(rng.gen::<bool>());
        let mut z = [0.0f64; 64];
        let mut heap;
        let z: &mut [f64] = if m <= z.len() {
            &mut z[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let f = &self.factors[k];
        for i in 0..m {
            let row = &f[i * m..(i + 1) * m];
            let x: f64 = row.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            out[i] = (self.means[k][i] + x).exp();
        }
        out[m] = 1.0;
    }
}
