use std::path::Path;
use std::process::{Command, Output};

use rck_core::model::FiniteOutcomeModel;
use serde_json::Value;

fn rck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rck")).args(args).output().expect("spawn rck")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_echoes_lambda_and_certificate() {
    let out = rck(&["solve", "--method", "rck", "--instance", "two:0.6:2", "--alpha", "0.7", "--beta", "0.1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let lambda = v["config"]["risk"]["lambda"].as_f64().unwrap();
    assert!((lambda - 6.4557).abs() < 1e-3);
    assert_eq!(v["config"]["risk"]["alpha"], 0.7);
    assert_eq!(v["config"]["problem"]["kind"], "two");
    assert_eq!(v["config"]["solver"]["kkt_tol"], 1e-6);
    let cert = &v["certificate"][0];
    assert_eq!(cert["guaranteed"], true);
    assert!((cert["bound"].as_f64().unwrap() - 0.1).abs() < 1e-9);
    let b1 = v["report"]["bet"][0].as_f64().unwrap();
    let exact = rck_core::rck::solve_two_outcome_rck(0.6, 2.0, lambda, 1e-12).unwrap();
    assert!((b1 - exact.as_slice()[0]).abs() < 1e-4);
}

#[test]
fn losing_game_holds_cash() {
    let v = stdout_json(&rck(&["solve", "--method", "kelly", "--instance", "two:0.4:2"]));
    assert_eq!(v["report"]["bet"], serde_json::json!([0.0, 1.0]));
    assert_eq!(v["report"]["growth"]["mean"], 0.0);
    assert_eq!(v["certificate"], Value::Null);
}

#[test]
fn zero_lambda_matches_kelly() {
    let common = ["--instance", "finite", "--n", "6", "--k", "30", "--seed", "2"];
    let kelly = stdout_json(&rck(&[&["solve", "--method", "kelly"][..], &common].concat()));
    let rck0 = stdout_json(&rck(&[&["solve", "--method", "rck", "--lambda", "0"][..], &common].concat()));
    assert_eq!(kelly["report"]["bet"], rck0["report"]["bet"]);
}

#[test]
fn usage_and_file_errors() {
    let both = rck(&["solve", "--method", "rck", "--instance", "two:0.6:2", "--lambda", "3", "--alpha", "0.7", "--beta", "0.1"]);
    assert_eq!(both.status.code(), Some(2));
    assert_eq!(rck(&["solve", "--method", "rck", "--instance", "two:0.6:2"]).status.code(), Some(2));
    assert_eq!(rck(&["solve", "--method", "kelly", "--instance", "two:0.6:2", "--lambda", "1"]).status.code(), Some(2));
    assert_eq!(rck(&["solve", "--method", "kelly", "--instance", "three"]).status.code(), Some(2));
    assert_eq!(rck(&["solve", "--method", "rck", "--instance", "two:0.6:2", "--alpha", "1.5", "--beta", "0.1"]).status.code(), Some(2));
    assert_eq!(rck(&["gen", "--kind", "two", "--pi", "0.6"]).status.code(), Some(2));
    assert_eq!(rck(&["solve", "--method", "kelly", "--problem", "/no/such/file.json"]).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(rck(&["solve", "--method", "kelly", "--problem", bad.to_str().unwrap()]).status.code(), Some(3));
    let out = dir.path().join("missing-dir").join("out.json");
    assert_eq!(rck(&["gen", "--kind", "finite", "--out", out.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn non_convergence_exits_one_with_report() {
    let out = rck(&["solve", "--method", "rck", "--instance", "mixture", "--n", "6", "--lambda", "6.456", "--iters", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["report"]["converged"], false);
    assert_eq!(v["config"]["solver"]["max_iters"], 5);
}

#[test]
fn simulate_cash_bet() {
    let dir = tempfile::tempdir().unwrap();
    let bet = dir.path().join("bet.json");
    std::fs::write(&bet, "[0.0, 0.0, 0.0, 0.0, 1.0]").unwrap();
    let out = rck(&[
        "simulate", "--bet", bet.to_str().unwrap(), "--instance", "finite", "--n", "5", "--k", "20",
        "--trajectories", "300", "--lambda", "6.456",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    for r in v["summary"]["drawdown_risk"].as_array().unwrap() {
        assert_eq!(r["probability"], 0.0);
    }
    assert_eq!(v["config"]["plan"]["horizon"], 100);
    for c in v["validation"]["checks"].as_array().unwrap() {
        assert_eq!(c["margin"], c["bound"]);
    }
}

#[test]
fn simulate_from_solve_validates_bound() {
    let dir = tempfile::tempdir().unwrap();
    let solve = dir.path().join("solve.json");
    let csv = dir.path().join("traj.csv");
    let s = rck(&["solve", "--method", "rck", "--instance", "finite", "--alpha", "0.7", "--beta", "0.1", "--out", solve.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(0));
    let out = rck(&["simulate", "--from-solve", solve.to_str().unwrap(), "--seed", "4", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let check = v["validation"]["checks"].as_array().unwrap().iter().find(|c| c["alpha"] == 0.7).unwrap().clone();
    let bound_plus = check["bound"].as_f64().unwrap() + 3.0 * check["std_err"].as_f64().unwrap();
    assert!(check["empirical"].as_f64().unwrap() < bound_plus);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("index,wmin,final_log_wealth\n"));
    assert_eq!(text.lines().count(), 10_001);
}

#[test]
fn gen_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        assert_eq!(rck(&["gen", "--kind", "finite", "--seed", "7", "--out", p.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let loaded = FiniteOutcomeModel::load(&a).unwrap();
    assert_eq!(loaded, rck_core::instances::gen_finite(20, 100, 7).unwrap());
    assert_eq!(json_file(&a)["meta"]["problem"]["seed"], 7);

    let two = stdout_json(&rck(&["gen", "--kind", "two", "--pi", "0.6", "--P", "2"]));
    assert_eq!(two["probs"], serde_json::json!([0.6, 0.4]));
    assert_eq!(two["returns"], serde_json::json!([[2.0, 1.0], [0.0, 1.0]]));

    let mix = dir.path().join("mix.json");
    rck(&["gen", "--kind", "mixture", "--n", "4", "--seed", "3", "--out", mix.to_str().unwrap()]);
    let spec = json_file(&mix);
    assert_eq!(spec["kind"], "mixture");
    assert_eq!(spec["version"], "mixture-v1");
    let solved = rck(&["solve", "--method", "qrck", "--problem", mix.to_str().unwrap(), "--lambda", "2"]);
    assert_eq!(solved.status.code(), Some(0), "{}", String::from_utf8_lossy(&solved.stderr));
}

#[test]
fn frontier_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let meta = dir.path().join("f.json");
    let out = rck(&[
        "frontier", "--instance", "finite", "--lambdas", "0,5.5,6.456", "--fractions", "0,0.25,0.5,0.75,1",
        "--out", csv.to_str().unwrap(), "--meta", meta.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..6], ["method", "param", "growth", "risk", "bound", "stderr"]);
    let rows: Vec<Vec<String>> = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    assert_eq!(rows.len(), 11);
    let find = |method: &str, param: &str| rows.iter().find(|r| r[0] == method && r[1] == param).unwrap().clone();
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();
    let cash = find("fractional", "0");
    assert_eq!((num(&cash, 2), num(&cash, 3)), (0.0, 0.0));
    let kelly = find("fractional", "1");
    let rck0 = find("rck", "0");
    assert!((num(&kelly, 2) - num(&rck0, 2)).abs() < 1e-6);
    assert!((num(&kelly, 3) - num(&rck0, 3)).abs() <= 3.0 * num(&kelly, 5));
    // At the same risk the constrained bet grows faster than a scaled Kelly
    // bet; the fractional curve is interpolated between its neighbors.
    let rck6 = find("rck", "6.456");
    let (risk, growth) = (num(&rck6, 3), num(&rck6, 2));
    let fractional: Vec<(f64, f64)> = rows.iter().filter(|r| r[0] == "fractional").map(|r| (num(r, 3), num(r, 2))).collect();
    let (lo, hi) = fractional
        .windows(2)
        .map(|w| (w[0], w[1]))
        .find(|(a, b)| a.0 <= risk && risk <= b.0)
        .unwrap();
    let interpolated = lo.1 + (hi.1 - lo.1) * (risk - lo.0) / (hi.0 - lo.0);
    assert!(growth > interpolated, "rck {growth} vs fractional {interpolated} at risk {risk}");
    assert_eq!(json_file(&meta)["command"], "frontier");
}
