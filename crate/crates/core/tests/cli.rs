use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const N_MODEL: &str = r#"{
  "classes": 2, "stations": 2,
  "edges": [
    {"class": 1, "station": 3, "mu": 1.0},
    {"class": 2, "station": 3, "mu": 2.0},
    {"class": 2, "station": 4, "mu": 0.5}
  ],
  "theta": [0.5, 0.2], "r": [1.0, 1.0],
  "lambda": [0.5, 1.25], "x_star": [0.5, 1.0], "nu": [1.0, 0.5],
  "psi_star": {"1-3": 0.5, "2-3": 0.5, "2-4": 0.5},
  "gamma": 1.0,
  "cost": {"queue_weights": [1.0, 1.5], "idle_weights": [0.5, 1.0]}
}"#;

const ONE_DIM: &str = r#"{
  "classes": 1, "stations": 1,
  "edges": [{"class": 1, "station": 2, "mu": 1.0}],
  "r": [1.4142135623730951],
  "lambda": [1.0], "x_star": [1.0], "nu": [1.0],
  "psi_star": {"1-2": 1.0},
  "gamma": 1.0,
  "cost": {"queue_weights": [1.0], "idle_weights": [0.0]}
}"#;

const CYCLE: &str = r#"{
  "classes": 2, "stations": 2,
  "edges": [
    {"class": 1, "station": 3, "mu": 1.0},
    {"class": 2, "station": 3, "mu": 1.0},
    {"class": 1, "station": 4, "mu": 2.0},
    {"class": 2, "station": 4, "mu": 2.0}
  ],
  "r": [1.0, 1.0], "lambda": [0.75, 0.75], "x_star": [0.5, 0.5], "nu": [0.5, 0.5],
  "psi_star": {"1-3": 0.25, "2-3": 0.25, "1-4": 0.25, "2-4": 0.25},
  "gamma": 1.0
}"#;

fn write_model(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn treediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treediff"))
        .args(args)
        .output()
        .expect("run treediff")
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn validate_reports_the_diameter_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "n.json", N_MODEL);
    let out_dir = dir.path().join("out");
    let out = treediff(&[
        "validate",
        "--config",
        model.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("diameter: 3"));
    let manifest = read_json(out_dir.join("manifest.json"));
    assert_eq!(manifest["command"], "validate");
    assert_eq!(manifest["seed"], 0);
    let report = read_json(out_dir.join("validate.json"));
    assert_eq!(report["valid"], true);
}

#[test]
fn a_cyclic_network_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "cycle.json", CYCLE);
    let out_dir = dir.path().join("out");
    let out = treediff(&[
        "validate",
        "--config",
        model.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(out_dir.join("validate.json"))["valid"], false);
}

#[test]
fn malformed_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "bad.json", "{\"classes\": 2,");
    let out_dir = dir.path().join("out");
    let out = treediff(&[
        "validate",
        "--config",
        model.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let missing = treediff(&[
        "simulate",
        "--config",
        "/nonexistent/model.json",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let unknown_flag = treediff(&["validate", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
}

#[test]
fn counterexample_meets_its_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = treediff(&[
        "counterexample",
        "--k",
        "10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(out_dir.join("counterexample.json"));
    assert!(report["max_residual"].as_f64().unwrap() < 1e-8);
    let norm = report["sup_state_norm"].as_f64().unwrap();
    assert!((9.9..=10.1).contains(&norm));
    let csv = fs::read_to_string(out_dir.join("counterexample.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("psi_1_3"));
}

#[test]
fn simulation_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "n.json", N_MODEL);
    let run = |seed: &str, threads: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = treediff(&[
            "simulate",
            "--config",
            model.to_str().unwrap(),
            "--seed",
            seed,
            "--threads",
            threads,
            "--horizon",
            "2",
            "--x0",
            "1,-1",
            "--policy",
            "random:2",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read(out_dir.join("path.csv")).unwrap()
    };
    let a = run("7", "1", "a");
    let b = run("7", "2", "b");
    let c = run("8", "1", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn hjb_pipeline_on_the_one_dimensional_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "one.json", ONE_DIM);
    let config = model.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out_arg = out_dir.to_str().unwrap();

    let solve = treediff(&[
        "solve-hjb",
        "--config",
        config,
        "--h",
        "0.05",
        "--boundary-paths",
        "100",
        "--out",
        out_arg,
    ]);
    assert_eq!(
        solve.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&solve.stderr)
    );
    let report = read_json(out_dir.join("hjb_report.json"));
    assert_eq!(report["converged"], true);
    assert!(out_dir.join("value.csv").exists());

    let value = out_dir.join("value.bin");
    let extract = treediff(&[
        "extract-policy",
        "--config",
        config,
        "--value",
        value.to_str().unwrap(),
        "--out",
        out_arg,
    ]);
    assert_eq!(
        extract.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&extract.stderr)
    );

    let policy = format!("field:{}", out_dir.join("policy.bin").display());
    let evaluate = treediff(&[
        "evaluate-policy",
        "--config",
        config,
        "--policy",
        &policy,
        "--x0",
        "0.5",
        "--paths",
        "4000",
        "--dt",
        "0.01",
        "--value",
        value.to_str().unwrap(),
        "--out",
        out_arg,
    ]);
    assert_eq!(
        evaluate.status.code(),
        Some(0),
        "{}{}",
        stdout(&evaluate),
        String::from_utf8_lossy(&evaluate.stderr)
    );
    let evaluation = read_json(out_dir.join("evaluation.json"));
    assert!(evaluation["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn a_value_file_for_another_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_model(dir.path(), "one.json", ONE_DIM);
    let other = write_model(
        dir.path(),
        "other.json",
        &ONE_DIM.replace("\"gamma\": 1.0", "\"gamma\": 2.0"),
    );
    let out_dir = dir.path().join("out");
    let out_arg = out_dir.to_str().unwrap();
    let solve = treediff(&[
        "solve-hjb",
        "--config",
        one.to_str().unwrap(),
        "--h",
        "0.1",
        "--boundary",
        "extrapolate",
        "--out",
        out_arg,
    ]);
    assert_eq!(solve.status.code(), Some(0));
    let value = out_dir.join("value.bin");
    let extract = treediff(&[
        "extract-policy",
        "--config",
        other.to_str().unwrap(),
        "--value",
        value.to_str().unwrap(),
        "--out",
        out_arg,
    ]);
    assert_eq!(extract.status.code(), Some(2));
}

#[test]
fn integral_residual_converges_at_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "n.json", N_MODEL);
    let out_dir = dir.path().join("out");
    let out = treediff(&[
        "integral-residual",
        "--config",
        model.to_str().unwrap(),
        "--check-order",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ratio = read_json(out_dir.join("residual.json"))["ratio"]
        .as_f64()
        .unwrap();
    assert!((1.7..=2.3).contains(&ratio));
    assert!(out_dir.join("sequences.json").exists());
}

#[test]
fn nonidling_and_deterministic_runs() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "n.json", N_MODEL);
    let config = model.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out_arg = out_dir.to_str().unwrap();
    let check = treediff(&[
        "nonidling-check",
        "--config",
        config,
        "--runs",
        "6",
        "--horizon",
        "2",
        "--out",
        out_arg,
    ]);
    assert_eq!(
        check.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&check.stderr)
    );
    assert_eq!(
        read_json(out_dir.join("nonidling.json"))["hypotheses_hold"],
        true
    );
    let det = treediff(&[
        "det-run",
        "--config",
        config,
        "--driver",
        "1,1:1,1",
        "--control",
        "static:1,3",
        "--horizon",
        "1",
        "--out",
        out_arg,
    ]);
    assert_eq!(
        det.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&det.stderr)
    );
    assert!(out_dir.join("det.csv").exists());
}

#[test]
fn prelimit_and_comparison_commands() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "one.json", ONE_DIM);
    let config = model.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out_arg = out_dir.to_str().unwrap();
    let pre = treediff(&[
        "prelimit", "--config", config, "--n", "50", "--x0", "0.5", "--out", out_arg,
    ]);
    assert_eq!(
        pre.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&pre.stderr)
    );
    assert!(
        read_json(out_dir.join("prelimit.json"))["events"]
            .as_u64()
            .unwrap()
            > 0
    );
    let cmp = treediff(&[
        "compare", "--config", config, "--n", "100", "--x0", "0.5", "--reps", "300", "--dt",
        "0.01", "--out", out_arg,
    ]);
    assert_eq!(
        cmp.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&cmp.stderr)
    );
    let table = fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}
