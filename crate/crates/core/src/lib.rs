//! Growth-optimal (Kelly) and drawdown-risk-constrained Kelly (RCK) betting.
//!
//! The crate solves
//!
//! ```text
//! maximize    E log(r'b)
//! subject to  E (r'b)^(-lambda) <= 1,  1'b = 1,  b >= 0
//! ```
//!
//! for finite and sampled return distributions, checks the optimality
//! conditions of the result, and validates the drawdown guarantee
//! `Prob(W_min < alpha) < alpha^lambda` by Monte Carlo simulation.

pub mod cli;
pub mod error;
pub mod instances;
pub mod kelly;
pub mod model;
pub mod montecarlo;
pub mod qrck;
pub mod rck;
pub mod rng;
pub mod simplex;
pub mod solver;

pub use error::{Error, Result};
