use std::path::{Path, PathBuf};
use std::process::Command;

use ddespec::model::CoefficientPair;
use ddespec_cli::selftest::operator_norm_ratio;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddespec"))
}

fn write_model(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> i32 {
    let out = bin().args(args).output().unwrap();
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FAST: [&str; 5] = ["--omega-points", "64", "--M", "128", "--no-refine"];

fn analyze(dir: &TempDir, model: &str, out: &str) -> (i32, Value) {
    let m = write_model(dir.path(), &format!("{out}.json"), model);
    let o = dir.path().join(out);
    let mut args = vec![
        "analyze",
        "--model",
        m.to_str().unwrap(),
        "--out",
        o.to_str().unwrap(),
    ];
    args.extend(FAST);
    let code = run(&args);
    (code, json(&o.join("verdict.json")))
}

#[test]
fn stable_scalar_model_exits_zero() {
    let dir = TempDir::new().unwrap();
    let (code, v) = analyze(
        &dir,
        r#"{"kind": "linear", "tau": 0.3, "A": -1.0, "B": 0.5}"#,
        "stable",
    );
    assert_eq!(code, 0);
    assert_eq!(v["overall"], "stable");
    assert!((v["s3_weak_stability"]["sup_gamma"].as_f64().unwrap() - 0.5f64.ln()).abs() < 1e-6);
    for f in [
        "acs.csv",
        "instantaneous.json",
        "verdict.json",
        "config.json",
    ] {
        assert!(dir.path().join("stable").join(f).exists(), "{f} missing");
    }
    let config = json(&dir.path().join("stable/config.json"));
    assert!(config["model_text"]
        .as_str()
        .unwrap()
        .contains("\"B\": 0.5"));
}

#[test]
fn strong_feedback_exits_two() {
    let dir = TempDir::new().unwrap();
    let (code, v) = analyze(
        &dir,
        r#"{"kind": "linear", "tau": 0.3, "A": -1.0, "B": 1.5}"#,
        "unstable",
    );
    assert_eq!(code, 2);
    assert_eq!(v["u2"], true);
}

#[test]
fn axis_spectrum_exits_three() {
    let dir = TempDir::new().unwrap();
    let (code, v) = analyze(
        &dir,
        r#"{"kind": "linear", "tau": 0.3, "A": 0.0, "B": 0.5}"#,
        "axis",
    );
    assert_eq!(code, 3);
    assert_eq!(v["degeneracy_flags"][0], "axis-instantaneous");
}

#[test]
fn errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(
        run(&["analyze", "--model", "/nonexistent.json", "--out", out]),
        1
    );
    assert_eq!(run(&["analyze", "--bogus"]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    let bad = write_model(
        dir.path(),
        "bad.json",
        r#"{"kind": "linear", "tau": 2.0, "A": -1, "B": 0.5}"#,
    );
    assert_eq!(
        run(&["analyze", "--model", bad.to_str().unwrap(), "--out", out]),
        1
    );
    let m = write_model(
        dir.path(),
        "m.json",
        r#"{"kind": "linear", "tau": 0.3, "A": -1, "B": 0.5}"#,
    );
    assert_eq!(
        run(&[
            "analyze",
            "--model",
            m.to_str().unwrap(),
            "--out",
            out,
            "--tol-margin",
            "0"
        ]),
        1
    );
    assert_eq!(run(&["--version"]), 0);
}

#[test]
fn floquet_audits_and_band_convergence() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        dir.path(),
        "s.json",
        r#"{"kind": "linear", "tau": 0.3, "A": -1.0, "B": 0.5, "N": [10, 20]}"#,
    );
    let o = dir.path().join("f");
    let args = [
        "floquet",
        "--model",
        m.to_str().unwrap(),
        "--out",
        o.to_str().unwrap(),
        "--omega-points",
        "96",
        "--no-refine",
    ];
    assert_eq!(run(&args), 0);
    let audit = json(&o.join("audit.json"));
    assert_eq!(audit["audits_pass"], true);
    assert!(
        audit["band_error_ratios"][0]["band_error_ratio"]
            .as_f64()
            .unwrap()
            >= 2.5
    );
    let csv = std::fs::read_to_string(o.join("floquet.csv")).unwrap();
    assert!(csv.starts_with("N,theta,re,im,multiplicity,source,residual\n"));
    assert!(o.join("predictions.csv").exists());
}

#[test]
fn floquet_without_coupling_returns_the_instantaneous_spectrum() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        dir.path(),
        "z.json",
        r#"{"kind": "linear", "tau": 0.4, "A": [[-0.5, 1.0], [-1.0, -0.5]], "B": 0, "N": [1, 10]}"#,
    );
    let o = dir.path().join("f");
    assert_eq!(
        run(&[
            "floquet",
            "--model",
            m.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
            "--omega-points",
            "32"
        ]),
        0
    );
    let csv = std::fs::read_to_string(o.join("floquet.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(4).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!((r[2] + 0.5).abs() < 1e-9 && (r[3].abs() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn simulate_writes_trajectory_and_growth() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        dir.path(),
        "s.json",
        r#"{"kind": "linear", "tau": 0.3, "A": -1.0, "B": 0.5}"#,
    );
    let o = dir.path().join("sim");
    assert_eq!(
        run(&[
            "simulate",
            "--model",
            m.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
            "--N",
            "10",
            "--horizon",
            "100"
        ]),
        0
    );
    let growth = json(&o.join("growth.json"));
    let rate = growth[0]["dominant_rate"].as_f64().unwrap();
    assert!((rate + 0.0611678).abs() < 1e-3, "{rate}");
    let traj = std::fs::read_to_string(o.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("N,t,log_norm,x0\n"));
    assert!(traj.lines().count() > 1000);
}

#[test]
fn orbit_command_continues_the_branch() {
    let dir = TempDir::new().unwrap();
    let m = write_model(
        dir.path(),
        "h.json",
        r#"{"kind": "nonlinear_builtin", "alpha": -0.10779, "coupling": 1.0, "tau_base": 1.081}"#,
    );
    let o = dir.path().join("orbit");
    let args = [
        "orbit",
        "--model",
        m.to_str().unwrap(),
        "--out",
        o.to_str().unwrap(),
        "--tau-end",
        "1.2",
    ];
    assert_eq!(run(&args), 0);
    let orbit = json(&o.join("orbit.json"));
    assert!((orbit["period"].as_f64().unwrap() - 1.028478610117).abs() < 1e-8);
    let branch = std::fs::read_to_string(o.join("branch.csv")).unwrap();
    let last: Vec<f64> = branch
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((last[0] - 1.2).abs() < 1e-12);
    assert!(last[2] > 0.0);
    let linear = write_model(
        dir.path(),
        "l.json",
        r#"{"kind": "linear", "tau": 0.3, "A": -1, "B": 0.5}"#,
    );
    assert_eq!(
        run(&[
            "orbit",
            "--model",
            linear.to_str().unwrap(),
            "--out",
            o.to_str().unwrap()
        ]),
        1
    );
}

#[test]
fn forcing_the_partition_count_down_breaks_the_norm_bound() {
    let cp = CoefficientPair::scalar(2.0, 0.5);
    assert!(operator_norm_ratio(&cp, 0.3, None, 0).unwrap() <= 1.05);
    assert!(operator_norm_ratio(&cp, 0.3, Some(1), 0).unwrap() > 1.05);
}
