//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits with failure if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rck_core::instances::{gen_finite, gen_near_unity};
use rck_core::kelly;
use rck_core::model::{fractional_kelly, lambda_from_alpha_beta, BetVector, FiniteOutcomeModel, FiniteSampler, Source};
use rck_core::montecarlo::{simulate, validate_bound, SimulationPlan};
use rck_core::qrck::{markowitz_gamma_of_qrck, solve_markowitz, solve_qrck, MomentEstimate};
use rck_core::rck::{light_regime_approx, risk_excess, solve_finite_rck, solve_sampled_rck, solve_two_outcome_rck, SolverConfig};
use rck_core::rng::{substream, Namespace, StreamRng};
use rck_core::simplex::TruncatedSimplex;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Seed of the random case sweeps; each criterion uses its own stream.
const SWEEP_SEED: u64 = 0xacce;

fn rng(stream: u64) -> StreamRng {
    substream(Namespace::Instance, SWEEP_SEED, stream)
}

/// Seed of the regenerated 20 x 100 finite instance.
const FINITE_SEED: u64 = 0;
const LAMBDA_TABLE: f64 = 6.456;

fn regenerated() -> FiniteOutcomeModel {
    gen_finite(20, 100, FINITE_SEED).unwrap()
}

fn standard_plan() -> SimulationPlan {
    SimulationPlan { trajectories: 10_000, horizon: 100, seed: 1, ..SimulationPlan::default() }
}

fn c1_lambda() -> Outcome {
    let l = lambda_from_alpha_beta(0.7, 0.1).map_err(|e| e.to_string())?;
    ensure((l - 6.4557).abs() <= 1e-3, || format!("lambda = {l}"))?;
    Ok(format!("lambda(0.7, 0.1) = {l:.5}"))
}

fn grid_kelly_b1(pi: f64, p: f64) -> f64 {
    let mut best = (0.0, 0.0);
    let mut i = 0u32;
    loop {
        let b1 = i as f64 * 1e-5;
        if b1 >= 1.0 {
            break;
        }
        let g = pi * (b1 * (p - 1.0)).ln_1p() + (1.0 - pi) * (-b1).ln_1p();
        if g > best.1 {
            best = (b1, g);
        }
        i += 1;
    }
    best.0
}

fn c2_two_outcome_kelly() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pi = r.gen_range(0.05..0.95);
        let p = r.gen_range(1.05..5.0);
        let b = kelly::solve_two_outcome(pi, p).map_err(|e| e.to_string())?;
        let d = (b.as_slice()[0] - grid_kelly_b1(pi, p)).abs();
        worst = worst.max(d);
        ensure(d <= 1e-4, || format!("pi = {pi}, P = {p}: |db1| = {d:e}"))?;
    }
    Ok(format!("100 cases, max |db1| = {worst:.2e} (tol 1e-4)"))
}

fn two_outcome_excess(pi: f64, p: f64, lambda: f64, b1: f64) -> f64 {
    pi * (1.0 + b1 * (p - 1.0)).powf(-lambda) + (1.0 - pi) * (1.0 - b1).powf(-lambda) - 1.0
}

fn c3_two_outcome_rck() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for _ in 0..200 {
        let pi = r.gen_range(0.3..0.9);
        let p = r.gen_range(1.2..4.0);
        let lambda = r.gen_range(0.5..20.0);
        let kelly_bet = kelly::solve_two_outcome(pi, p).map_err(|e| e.to_string())?;
        let b = solve_two_outcome_rck(pi, p, lambda, 1e-12).map_err(|e| e.to_string())?;
        let b1 = b.as_slice()[0];
        let bk = kelly_bet.as_slice()[0];
        let excess = two_outcome_excess(pi, p, lambda, b1);
        let residual = if b == kelly_bet { excess.max(0.0) } else { excess.abs() };
        if b != kelly_bet {
            active += 1;
        }
        worst = worst.max(residual);
        ensure(residual <= 1e-10, || format!("pi = {pi}, P = {p}, lambda = {lambda}: residual {residual:e}"))?;
        if bk > 0.0 {
            let f = b1 / bk;
            let rebuilt = fractional_kelly(&kelly_bet, f.min(1.0)).map_err(|e| e.to_string())?;
            ensure((0.0..=1.0 + 1e-15).contains(&f) && rebuilt.max_abs_diff(&b) <= 1e-12, || {
                format!("pi = {pi}, P = {p}, lambda = {lambda}: not a fractional Kelly point (f = {f})")
            })?;
        } else {
            ensure(b == BetVector::cash(2), || format!("pi = {pi}, P = {p}: losing game not all cash"))?;
        }
    }
    Ok(format!("200 cases ({active} constrained), max residual = {worst:.2e}, all fractional Kelly"))
}

/// Best growth over feasible points of a step-1e-3 grid on the 3-simplex.
fn grid_rck_n3(m: &FiniteOutcomeModel, lambda: f64) -> f64 {
    let steps = 1000;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let b = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            if risk_excess(m, &b, lambda) > 0.0 {
                continue;
            }
            let g = m.growth(&b).mean;
            if g > best {
                best = g;
            }
        }
    }
    best
}

fn c4_finite_kkt() -> Outcome {
    let mut r = rng(4);
    let cfg = SolverConfig::default();
    let (mut worst_kkt, mut worst_risk, mut worst_gap): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut binding = 0;
    for i in 0..20u64 {
        let n = 3 + (i as usize % 8);
        let k = r.gen_range(5..=50);
        let lambda = r.gen_range(1.0..10.0);
        let m = gen_finite(n, k, 1000 + i).map_err(|e| e.to_string())?;
        let rep = solve_finite_rck(&m, lambda, &cfg).map_err(|e| e.to_string())?;
        ensure(rep.converged, || format!("instance {i} (n = {n}, K = {k}): not converged, {rep:?}"))?;
        ensure(rep.kkt_residual <= 1e-6, || format!("instance {i}: KKT residual {:e}", rep.kkt_residual))?;
        ensure(rep.risk_value.mean <= 1.0 + 1e-8, || format!("instance {i}: risk value {}", rep.risk_value.mean))?;
        if rep.kappa > 0.0 {
            binding += 1;
        }
        worst_kkt = worst_kkt.max(rep.kkt_residual);
        worst_risk = worst_risk.max(rep.risk_value.mean - 1.0);
        if n == 3 {
            let oracle = grid_rck_n3(&m, lambda);
            let gap = oracle - rep.growth.mean;
            worst_gap = worst_gap.max(gap);
            ensure(gap <= 1e-4, || format!("instance {i}: growth {} below grid oracle {oracle}", rep.growth.mean))?;
        }
    }
    Ok(format!(
        "20 instances ({binding} with binding constraint), max KKT = {worst_kkt:.1e}, max risk-1 = {worst_risk:.1e}, \
         n=3 oracle gap = {worst_gap:.1e}"
    ))
}

fn c5_bound_validation() -> Outcome {
    let m = regenerated();
    let cfg = SolverConfig::default();
    let plan = standard_plan();
    let mut notes = Vec::new();
    for lambda in [4.0, 5.5, LAMBDA_TABLE] {
        let rep = solve_finite_rck(&m, lambda, &cfg).map_err(|e| e.to_string())?;
        ensure(rep.risk_value.mean <= 1.0 + 1e-8, || format!("lambda = {lambda}: risk value {}", rep.risk_value.mean))?;
        let stats = simulate(Source::Model(&m), &rep.bet, &plan).map_err(|e| e.to_string())?;
        let v = validate_bound(&stats, lambda).map_err(|e| e.to_string())?;
        for c in &v.checks {
            ensure(c.holds, || {
                format!("lambda = {lambda}, alpha = {}: empirical {} vs bound {} + 3 x {}", c.alpha, c.empirical, c.bound, c.std_err)
            })?;
        }
        ensure(v.cdf_dominated, || format!("lambda = {lambda}: CDF exceeds the bound by {}", v.worst_cdf_excess))?;
        let at07 = v.checks.iter().find(|c| c.alpha == 0.7).unwrap();
        notes.push(format!("l={lambda}: {:.3} vs {:.3}", at07.empirical, at07.bound));
    }
    Ok(format!("all alphas hold; risk at 0.7: {}", notes.join(", ")))
}

fn c6_ordering() -> Outcome {
    let m = regenerated();
    let cfg = SolverConfig::default();
    let plan = standard_plan();
    let k = kelly::solve_finite(&m, &cfg).map_err(|e| e.to_string())?;
    let r55 = solve_finite_rck(&m, 5.5, &cfg).map_err(|e| e.to_string())?;
    let r6 = solve_finite_rck(&m, LAMBDA_TABLE, &cfg).map_err(|e| e.to_string())?;
    let (gk, g55, g6) = (k.growth.mean, r55.growth.mean, r6.growth.mean);
    ensure(gk > g55 && g55 > g6, || format!("growth ordering fails: {gk} {g55} {g6}"))?;
    let rk = simulate(Source::Model(&m), &k.bet, &plan).map_err(|e| e.to_string())?.risk_at(0.7);
    let r6s = simulate(Source::Model(&m), &r6.bet, &plan).map_err(|e| e.to_string())?.risk_at(0.7);
    ensure(rk.probability > 0.25, || format!("Kelly risk at 0.7 = {}", rk.probability))?;
    ensure(r6s.probability < 0.10 + 3.0 * r6s.std_err, || format!("RCK risk at 0.7 = {}", r6s.probability))?;
    Ok(format!(
        "growth {gk:.4} > {g55:.4} > {g6:.4}; risk at 0.7: Kelly {:.3}, RCK(6.456) {:.3}",
        rk.probability, r6s.probability
    ))
}

fn random_moments(r: &mut StreamRng, n: usize) -> MomentEstimate {
    let m = n - 1;
    let a: Vec<f64> = (0..m * m).map(|_| r.gen_range(-0.1..0.1)).collect();
    let mut sigma = vec![0.0; n * n];
    for i in 0..m {
        for j in 0..m {
            let s: f64 = (0..m).map(|l| a[i * m + l] * a[j * m + l]).sum();
            sigma[i * n + j] = s + if i == j { r.gen_range(0.001..0.02) } else { 0.0 };
        }
    }
    let mut mu: Vec<f64> = (0..m).map(|_| r.gen_range(-0.03..0.06)).collect();
    mu.push(0.0);
    MomentEstimate::new(mu, sigma, 0).unwrap()
}

fn c7_markowitz() -> Outcome {
    let mut r = rng(7);
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = r.gen_range(3..=10);
        let lambda = r.gen_range(0.5..10.0);
        let moments = random_moments(&mut r, n);
        let q = solve_qrck(&moments, lambda, &cfg).map_err(|e| e.to_string())?;
        let gamma = markowitz_gamma_of_qrck(&q, &moments).map_err(|e| format!("instance {i}: {e}"))?;
        let mk = solve_markowitz(&moments, gamma, &cfg).map_err(|e| e.to_string())?;
        let d = mk.bet.max_abs_diff(&q.bet);
        worst = worst.max(d);
        ensure(d <= 1e-3, || format!("instance {i} (n = {n}, lambda = {lambda}): |b_M - b_Q| = {d:e}"))?;
    }
    Ok(format!("20 instances, max |b_M - b_Q| = {worst:.1e} (tol 1e-3)"))
}

fn c8_taylor() -> Outcome {
    let cfg = SolverConfig::default();
    let (mut worst_bet, mut worst_gap): (f64, f64) = (0.0, 0.0);
    for seed in 0..10u64 {
        let m = gen_near_unity(6, 50, 0.01, seed).map_err(|e| e.to_string())?;
        ensure(m.returns().iter().all(|x| (0.99..=1.01).contains(x)), || format!("seed {seed}: returns leave [0.99, 1.01]"))?;
        let moments = MomentEstimate::from_model(&m);
        for lambda in [1e-3, 1.0, LAMBDA_TABLE] {
            let rb = solve_finite_rck(&m, lambda, &cfg).map_err(|e| e.to_string())?;
            let qb = solve_qrck(&moments, lambda, &cfg).map_err(|e| e.to_string())?;
            let d = rb.bet.max_abs_diff(&qb.bet);
            worst_bet = worst_bet.max(d);
            ensure(d <= 1e-2, || format!("seed {seed}, lambda = {lambda}: |b_Q - b_R| = {d:e}"))?;
        }
        for bet in [
            solve_finite_rck(&m, 1e-3, &cfg).map_err(|e| e.to_string())?.bet,
            BetVector::cash(6),
            fractional_kelly(&solve_finite_rck(&m, 0.0, &cfg).map_err(|e| e.to_string())?.bet, 0.5).unwrap(),
        ] {
            let (a, b) = light_regime_approx(&m, &bet, 1e-3).map_err(|e| e.to_string())?;
            let gap = (a - b).abs();
            worst_gap = worst_gap.max(gap);
            ensure(gap <= 1e-5, || format!("seed {seed}: light-regime gap {gap:e}"))?;
        }
    }
    Ok(format!("10 instances, max |b_Q - b_R| = {worst_bet:.1e} (tol 1e-2), max pair gap = {worst_gap:.1e} (tol 1e-5)"))
}

fn c9_sampled() -> Outcome {
    let m = regenerated();
    let det = solve_finite_rck(&m, LAMBDA_TABLE, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let sampler = FiniteSampler::new(m, 7);
    let cfg = SolverConfig { max_iters: 10_000, batch_size: 100, ..SolverConfig::sampled() };
    let rep = solve_sampled_rck(&sampler, 20, LAMBDA_TABLE, &cfg).map_err(|e| e.to_string())?;
    let d = rep.bet.max_abs_diff(&det.bet);
    ensure(d <= 2e-2, || format!("|b - b_det| = {d}"))?;
    Ok(format!("1e4 iterations x batch 100, |b - b_det| = {d:.4} (tol 2e-2)"))
}

/// Projection onto the truncated simplex by enumerating free sets: for each
/// nonempty set `S` the point with `b_i = z_i - nu` on `S` and the lower
/// bound elsewhere; the projection is the nearest feasible candidate.
fn project_by_enumeration(z: &[f64], eps: f64) -> Vec<f64> {
    let n = z.len();
    let lower = |i: usize| if i == n - 1 { eps } else { 0.0 };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let fixed: f64 = (0..n).filter(|i| mask & (1 << i) == 0).map(lower).sum();
        let nu = (free.iter().map(|i| z[*i]).sum::<f64>() + fixed - 1.0) / free.len() as f64;
        let b: Vec<f64> = (0..n).map(|i| if mask & (1 << i) != 0 { z[i] - nu } else { lower(i) }).collect();
        if (0..n).any(|i| b[i] < lower(i) - 1e-12) {
            continue;
        }
        let dist: f64 = b.iter().zip(z).map(|(x, y)| (x - y).powi(2)).sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, b));
        }
    }
    best.unwrap().1
}

fn c10_projection() -> Outcome {
    let mut r = rng(10);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = r.gen_range(2..=8);
        let scale = [0.1, 1.0, 10.0, 100.0][case % 4];
        let eps = match case % 3 {
            0 => 0.0,
            1 => 1e-6,
            _ => r.gen_range(0.0..0.5),
        };
        let z: Vec<f64> = (0..n).map(|_| r.gen_range(-scale..scale)).collect();
        let d = TruncatedSimplex::new(n, eps).map_err(|e| e.to_string())?;
        let p = d.project(&z).map_err(|e| e.to_string())?;
        let oracle = project_by_enumeration(&z, eps);
        let diff = p.as_slice().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        ensure(diff <= 1e-8, || format!("z = {z:?}, eps = {eps}: diff {diff:e}"))?;
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(d.mass_below_max(&z, 1.0) >= 1.0, || format!("z = {z:?}: h(max z - 1) < 1"))?;
        ensure(d.mass_below_max(&z, 0.0) == eps && d.mass(&z, max) == eps, || format!("z = {z:?}: h(max z) != eps"))?;
    }
    Ok(format!("1000 inputs, max deviation from enumeration = {worst:.1e} (tol 1e-8), boundary identities exact"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rck")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("rck {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn c11_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name).display().to_string();
    let mut compared = 0;
    for (threads, tag) in [("1", "a"), ("4", "b"), ("3", "c")] {
        let solve = path(&format!("solve_{tag}.json"));
        run_cli(&["--threads", threads, "solve", "--method", "rck", "--instance", "finite", "--alpha", "0.7", "--beta", "0.1", "--seed", "3", "--out", &solve])?;
        let sim = path(&format!("sim_{tag}.json"));
        let csv = path(&format!("sim_{tag}.csv"));
        run_cli(&["--threads", threads, "simulate", "--from-solve", &solve, "--trajectories", "2000", "--seed", "9", "--out", &sim, "--csv", &csv])?;
        let fr = path(&format!("frontier_{tag}.csv"));
        let meta = path(&format!("frontier_{tag}.json"));
        run_cli(&[
            "--threads", threads, "frontier", "--instance", "finite", "--n", "8", "--k", "40", "--lambdas", "0,4,6.456",
            "--fractions", "0,0.5,1", "--trajectories", "1000", "--out", &fr, "--meta", &meta,
        ])?;
        let gen = path(&format!("gen_{tag}.json"));
        run_cli(&["--threads", threads, "gen", "--kind", "finite", "--seed", "7", "--out", &gen])?;
        let mix = path(&format!("mix_{tag}.json"));
        run_cli(&["--threads", threads, "gen", "--kind", "mixture", "--n", "5", "--seed", "7", "--out", &mix])?;
    }
    for name in ["solve_{}.json", "sim_{}.json", "sim_{}.csv", "frontier_{}.csv", "frontier_{}.json", "gen_{}.json", "mix_{}.json"] {
        let a = std::fs::read(path(&name.replace("{}", "a"))).map_err(|e| e.to_string())?;
        for tag in ["b", "c"] {
            let b = std::fs::read(path(&name.replace("{}", tag))).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{} differs between runs", name.replace("{}", tag)))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} output pairs byte-identical across repeated runs with --threads 1, 4, 3"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("lambda from (alpha, beta)", c1_lambda),
        ("two-outcome Kelly vs grid", c2_two_outcome_kelly),
        ("two-outcome RCK residual and fractional Kelly", c3_two_outcome_rck),
        ("finite RCK KKT certificate", c4_finite_kkt),
        ("drawdown bound validation", c5_bound_validation),
        ("Kelly vs RCK ordering", c6_ordering),
        ("QRCK / Markowitz equivalence", c7_markowitz),
        ("Taylor-regime agreement", c8_taylor),
        ("stochastic solver consistency", c9_sampled),
        ("projection vs enumeration", c10_projection),
        ("CLI determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
