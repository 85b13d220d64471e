use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfgame")).args(args).env_remove("MFGAME_OUTPUT_DIR").output().expect("binary runs")
}

fn run_in(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

/// Copy of a shipped config with some lines replaced.
fn patched(dir: &TempDir, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(config(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in {name}");
        text = text.replace(from, to);
    }
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// `A_value` of `(node, player)` from equilibrium.csv.
fn level(csv: &Path, node: usize, player: usize) -> f64 {
    let text = fs::read_to_string(csv).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == node.to_string() && f[2] == player.to_string())
        .map(|f| f[4].parse().unwrap())
        .expect("row present")
}

#[test]
fn validate_exit_codes() {
    assert_eq!(run(&["validate", config("quadratic.toml").to_str().unwrap()]).status.code(), Some(0));
    let sup = run(&["validate", config("supermodular.toml").to_str().unwrap()]);
    assert_eq!(sup.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&sup.stdout).contains("FAIL"));
    assert_eq!(run(&["validate", config("price_floor.toml").to_str().unwrap()]).status.code(), Some(1));
    // growth probe is advisory
    let exp = run(&["validate", config("counterexample.toml").to_str().unwrap()]);
    assert_eq!(exp.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&exp.stdout).contains("WARN (cost falls as the control grows)"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["validate", "/nonexistent/config.toml"]).status.code(), Some(2));
    assert_eq!(run(&["solve"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let bad = patched(&dir, "decoupled.toml", &[("n_schedule = [1, 2, 4]", "n_schedule = [4, 2]")]);
    let out = run_in("sweep", &bad, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let unknown = patched(&dir, "scalar.toml", &[("seed = 0", "seed = 0\nsede = 1")]);
    assert_eq!(run(&["validate", unknown.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn scalar_game_solves_to_level_one() {
    let dir = TempDir::new().unwrap();
    let out = run_in("solve", &config("scalar.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for player in 0..2 {
        assert!((level(&dir.path().join("equilibrium.csv"), 1, player) - 1.0).abs() <= 1e-6);
    }
    for file in ["costs.csv", "trace.csv", "summary.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let header = fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    assert!(header.starts_with("node_id,time,player,coord,A_value,dA\n"));
}

#[test]
fn counterexample_reports_a_coercivity_failure() {
    let dir = TempDir::new().unwrap();
    let out = run_in("solve", &config("counterexample.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coercivity failure"));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["coercivity_failure"], Value::Bool(true));
    assert!(!dir.path().join("equilibrium.csv").exists());
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(run_in("solve", &config("quadratic.toml"), d, &[]).status.code(), Some(0));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn decoupled_sweep_reaches_the_unconstrained_optimum() {
    let dir = TempDir::new().unwrap();
    let out = run_in("sweep", &config("decoupled.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("sweep_levels.csv")).unwrap();
    // rate n over [0, 1/2] reaches min(n/2, 3/4)
    for row in text.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let n: f64 = f[0].parse().unwrap();
        let a: f64 = f[3].parse().unwrap();
        assert!((a - (n / 2.0).min(0.75)).abs() <= 1e-7, "{row}");
    }
    let summary = json(&dir.path().join("sweep_summary.json"));
    assert_eq!(summary["verdicts"]["payoff_converged"], Value::Bool(true));
}

#[test]
fn oracle_comparison_within_one_grid_step() {
    let dir = TempDir::new().unwrap();
    let out = run_in("oracle-compare", &config("oracle.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("oracle.json"));
    let step = report["grid_step"].as_f64().unwrap();
    for row in report["rows"].as_array().unwrap() {
        assert!(row["sup_gap"].as_f64().unwrap() <= step);
        assert!(row["objective_gap"].as_f64().unwrap().abs() <= 1e-3);
    }
}

#[test]
fn zero_fuel_forces_the_zero_control() {
    let dir = TempDir::new().unwrap();
    let cfg = patched(&dir, "scalar.toml", &[("mode = \"monotone\"", "mode = \"fuel\"\ncap = 0.0")]);
    let out = run_in("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.path().join("out/equilibrium.csv");
    for node in 0..2 {
        for player in 0..2 {
            assert_eq!(level(&csv, node, player), 0.0);
        }
    }
}

#[test]
fn sdg_costs_match_in_both_coordinates() {
    for name in ["gbm.toml", "ou.toml"] {
        let dir = TempDir::new().unwrap();
        let out = run_in("sdg", &config(name), dir.path(), &[]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let summary = json(&dir.path().join("summary.json"));
        assert!(summary["identity_gap"].as_f64().unwrap() <= 1e-10);
        assert!(dir.path().join("equilibrium_original.csv").exists());
    }
}

#[test]
fn output_directory_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mfgame"))
        .args(["solve", config("scalar.toml").to_str().unwrap()])
        .env("MFGAME_OUTPUT_DIR", dir.path())
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("equilibrium.csv").exists());
}

#[test]
fn least_and_greatest_equilibria_differ() {
    let dir = TempDir::new().unwrap();
    let (low, high) = (dir.path().join("low"), dir.path().join("high"));
    assert_eq!(run_in("solve", &config("multi.toml"), &low, &[]).status.code(), Some(0));
    assert_eq!(run_in("solve", &config("multi.toml"), &high, &["--greatest"]).status.code(), Some(0));
    for player in 0..2 {
        assert_eq!(level(&low.join("equilibrium.csv"), 1, player), 0.0);
        assert!((level(&high.join("equilibrium.csv"), 1, player) - 2.0).abs() <= 1e-7);
    }
}
