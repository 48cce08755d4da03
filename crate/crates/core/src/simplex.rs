//! Euclidean projection onto the truncated simplex
//! `{b : 1'b = 1, b >= 0, b_n >= eps}`.
//!
//! The projection is `(z - nu 1)_{+,eps}`, where `(x)_{+,eps}` clips the risky
//! coordinates at zero and the cash coordinate at `eps`, and `nu` solves
//! `h(nu) = 1'(z - nu 1)_{+,eps} = 1`. `h` is continuous and nonincreasing with
//! `h(max z - 1) >= 1` and `h(max z) = eps`, so `nu` is found by bisection on
//! that interval.
//!
//! Internally `h` is evaluated through the shift `t = max z - nu`, i.e. on
//! `d_i + t` with `d_i = z_i - max z`, which makes both interval endpoints
//! exact in floating point.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::BetVector;

pub const BISECT_TOL: f64 = 1e-12;
pub const BISECT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSimplex {
    n: usize,
    eps: f64,
}

impl TruncatedSimplex {
    pub fn new(n: usize, eps: f64) -> Result<Self> {
        if n < 2 {
            return Err(domain(format!("simplex dimension must be >= 2, got {n}")));
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(domain(format!("cash floor must lie in [0, 1], got {eps}")));
        }
        Ok(TruncatedSimplex { n, eps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn contains(&self, b: &[f64], tol: f64) -> bool {
        b.len() == self.n
            && b.iter().all(|x| *x >= -tol)
            && b[self.n - 1] >= self.eps - tol
            && (b.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    fn check(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: z.len() });
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("projection input"));
        }
        Ok(z.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `h(nu) = 1'(z - nu 1)_{+,eps}`.
    pub fn mass(&self, z: &[f64], nu: f64) -> f64 {
        let (risky, cash) = z.split_at(self.n - 1);
        risky.iter().map(|x| (x - nu).max(0.0)).sum::<f64>() + (cash[0] - nu).max(self.eps)
    }

    /// `h(max z - shift)`, evaluated relative to `max z`.
    pub fn mass_below_max(&self, z: &[f64], shift: f64) -> f64 {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.shifted_mass(z, m, shift)
    }

    fn shifted_mass(&self, z: &[f64], m: f64, t: f64) -> f64 {
        let (risky, cash) = z.split_at(self.n - 1);
        risky.iter().map(|x| ((x - m) + t).max(0.0)).sum::<f64>() + ((cash[0] - m) + t).max(self.eps)
    }

    /// Solves `h(max z - t) = 1` for the shift `t` in `[0, 1]`.
    fn bisect_shift(&self, z: &[f64], m: f64) -> Result<f64> {
        let h = |t: f64| self.shifted_mass(z, m, t);
        if (h(0.0) - 1.0).abs() <= BISECT_TOL {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut t = 1.0;
        let mut found = (h(1.0) - 1.0).abs() <= BISECT_TOL;
        let mut iters = 0;
        while !found {
            if iters == BISECT_MAX_ITERS {
                return Err(Error::IterationLimit(BISECT_MAX_ITERS));
            }
            iters += 1;
            t = 0.5 * (lo + hi);
            let v = h(t);
            if (v - 1.0).abs() <= BISECT_TOL {
                found = true;
            } else if v < 1.0 {
                lo = t;
            } else {
                hi = t;
            }
            if hi - lo <= f64::EPSILON * 0.5 && !found {
                // Interval exhausted at double precision; take the better end.
                t = if (h(lo) - 1.0).abs() < (h(hi) - 1.0).abs() { lo } else { hi };
                found = (h(t) - 1.0).abs() <= BISECT_TOL;
                if !found {
                    return Err(Error::IterationLimit(iters));
                }
            }
        }
        // Solve the linear piece containing t exactly; keep it if it is better.
        let (risky, cash) = z.split_at(self.n - 1);
        let mut count = 0.0;
        let mut acc = 1.0;
        for x in risky {
            if (x - m) + t > 0.0 {
                count += 1.0;
                acc -= x - m;
            }
        }
        if (cash[0] - m) + t > self.eps {
            count += 1.0;
            acc -= cash[0] - m;
        } else {
            acc -= self.eps;
        }
        if count > 0.0 {
            let exact = acc / count;
            if (0.0..=1.0).contains(&exact) && (h(exact) - 1.0).abs() <= (h(t) - 1.0).abs() {
                t = exact;
            }
        }
        Ok(t)
    }

    /// The multiplier `nu` of the sum constraint.
    pub fn bisect_nu(&self, z: &[f64]) -> Result<f64> {
        let m = self.check(z)?;
        Ok(m - self.bisect_shift(z, m)?)
    }

    pub fn project(&self, z: &[f64]) -> Result<BetVector> {
        let mut out = vec![0.0; self.n];
        self.project_into(z, &mut out)?;
        Ok(BetVector::from_projection(out))
    }

    pub(crate) fn project_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.check(z)?;
        let t = self.bisect_shift(z, m)?;
        let n = self.n;
        for (o, x) in out[..n - 1].iter_mut().zip(&z[..n - 1]) {
            *o = ((x - m) + t).max(0.0);
        }
        out[n - 1] = ((z[n - 1] - m) + t).max(self.eps);
        Ok(())
    }
}
