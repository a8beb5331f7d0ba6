use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name).display().to_string()
}

fn ppverify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppverify"))
        .args(args)
        .env_remove("PPVERIFY_SOLVER_BUDGET")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    let o = ppverify(&all);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(&o)));
    assert_eq!(v["schema"], 1);
    assert_eq!(v["exit"], code(&o));
    (code(&o), v)
}

#[test]
fn check_majority_graphs_pass() {
    let o = ppverify(&[
        "check",
        "--protocol",
        &data("majority.json"),
        "--stage-graphs",
        &data("majority_stages.json"),
        "--predicate",
        "x >= y",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("all stage graphs pass"));
}

#[test]
fn check_with_broken_protocol_reports_counterexample() {
    let (c, v) = json(&[
        "check",
        "--protocol",
        &data("majority_no_t4.json"),
        "--stage-graphs",
        &data("majority_stages.json"),
        "--predicate",
        "x >= y",
    ]);
    assert_eq!(c, 1);
    let failing: Vec<&Value> = v["graphs"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|g| g["obligations"].as_array().unwrap())
        .filter(|o| o["pass"] == false)
        .collect();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|o| !o["counterexample"].as_array().unwrap().is_empty()));
}

#[test]
fn oracle_counts_inputs() {
    let o = ppverify(&["oracle", "--protocol", &data("majority.json"), "--predicate", "x >= y", "--max-agents", "8"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "Pass (44 inputs)");
}

#[test]
fn oracle_wrong_predicate_fails() {
    let (c, v) = json(&["oracle", "--protocol", &data("majority.json"), "--predicate", "x > y", "--max-agents", "4"]);
    assert_eq!(c, 1);
    assert_eq!(v["pass"], false);
    assert_eq!(v["expected"], 0);
}

#[test]
fn oracle_node_cap_is_a_budget_error() {
    let o = ppverify(&[
        "oracle",
        "--protocol",
        &data("majority.json"),
        "--predicate",
        "x >= y",
        "--max-agents",
        "6",
        "--node-cap",
        "2",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn verify_majority_succeeds_and_writes_checkable_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("graphs.json");
    let o = ppverify(&[
        "verify",
        "--protocol",
        &data("majority.json"),
        "--predicate",
        "x >= y",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"flow\": true"));
    let o = ppverify(&[
        "check",
        "--protocol",
        &data("majority.json"),
        "--stage-graphs",
        out.to_str().unwrap(),
        "--predicate",
        "x >= y",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn verify_broken_protocol_fails_with_trace() {
    let (c, v) = json(&["verify", "--protocol", &data("majority_no_t4.json"), "--predicate", "x >= y"]);
    assert_eq!(c, 1);
    assert_eq!(v["success"], false);
    assert!(!v["trace"].as_array().unwrap().is_empty());
    assert_eq!(v["oracle"]["pass"], false);
}

#[test]
fn verify_node_budget_is_a_budget_error() {
    let o = ppverify(&["verify", "--protocol", &data("majority.json"), "--predicate", "x >= y", "--node-budget", "0"]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
}

#[test]
fn solver_budget_env_var() {
    let o = Command::new(env!("CARGO_BIN_EXE_ppverify"))
        .args([
            "check",
            "--protocol",
            &data("majority.json"),
            "--stage-graphs",
            &data("majority_stages.json"),
            "--predicate",
            "x >= y",
        ])
        .env("PPVERIFY_SOLVER_BUDGET", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_ppverify"))
        .args(["oracle", "--protocol", &data("majority.json"), "--predicate", "x >= y", "--max-agents", "2"])
        .env("PPVERIFY_SOLVER_BUDGET", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_reports_runs_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let (c, v) = json(&[
        "--jobs",
        "2",
        "simulate",
        "--protocol",
        &data("majority.json"),
        "--input",
        "x=3,y=1",
        "--runs",
        "10",
        "--seed",
        "4",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(c, 0);
    assert_eq!(v["stats"]["correct"], 10);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next(), Some("3*AY 1*AN"));
    assert!(text.lines().last().unwrap().starts_with("# interactions="));
}

#[test]
fn simulate_cutoff_is_a_budget_error() {
    let o = ppverify(&["simulate", "--protocol", &data("majority.json"), "--config", "AY:3,AN:3", "--cutoff", "1"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn simulate_is_deterministic() {
    let args = ["simulate", "--protocol", &data("majority.json"), "--config", "3,2,0,0", "--seed", "11"];
    assert_eq!(stdout(&ppverify(&args)), stdout(&ppverify(&args)));
}

#[test]
fn gen_writes_protocol_and_predicate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flock.json");
    let o = ppverify(&["gen", "flock-linear", "--k", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let pred = std::fs::read_to_string(dir.path().join("flock.predicate")).unwrap();
    assert_eq!(pred.trim(), "x >= 3");
    let o = ppverify(&[
        "oracle",
        "--protocol",
        out.to_str().unwrap(),
        "--predicate",
        &format!("@{}", dir.path().join("flock.predicate").display()),
        "--max-agents",
        "6",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn gen_majority_matches_shipped_file() {
    let (c, v) = json(&["gen", "majority"]);
    assert_eq!(c, 0);
    let shipped: Value = serde_json::from_str(&std::fs::read_to_string(data("majority.json")).unwrap()).unwrap();
    let a = popproto::Protocol::from_json_value(&v["protocol"]).unwrap();
    let b = popproto::Protocol::from_json_value(&shipped).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gen_product_and_bad_parameters() {
    let (c, v) = json(&["gen", "product", "--left", "flock-linear:2", "--right", "remainder:1:3:0", "--op", "and"]);
    assert_eq!(c, 0);
    assert_eq!(v["states"], 15);
    let o = ppverify(&["gen", "remainder", "--coeffs", "1", "--modulus", "1", "--residue", "0"]);
    assert_eq!(code(&o), 2);
    let o = ppverify(&["gen", "flock-linear"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn export_smt_formula_and_obligations() {
    let o = ppverify(&["export-smt", "--formula", "x + 2*y >= 3 & x % 2 = 1"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("(check-sat)") && text.contains("(assert (>= x 0))"));

    let dir = tempfile::tempdir().unwrap();
    let o = ppverify(&[
        "export-smt",
        "--protocol",
        &data("majority.json"),
        "--stage-graphs",
        &data("majority_stages.json"),
        "--predicate",
        "x >= y",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let n = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(n, 21);
}

#[test]
fn input_errors_exit_2() {
    let missing = ppverify(&[
        "check",
        "--protocol",
        "/nonexistent.json",
        "--stage-graphs",
        &data("majority_stages.json"),
        "--predicate",
        "x >= y",
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"states":["a"],"outputs":{"a":1},"inputs":{"x":"a"},"transitions":[["a","b","a","a"]]}"#)
        .unwrap();
    let o = ppverify(&["oracle", "--protocol", bad.to_str().unwrap(), "--predicate", "x >= 1", "--max-agents", "3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains('b'));

    assert_eq!(
        code(&ppverify(&["oracle", "--protocol", &data("majority.json"), "--predicate", "x >=", "--max-agents", "3"])),
        2
    );
    assert_eq!(code(&ppverify(&["bogus"])), 2);
    assert_eq!(code(&ppverify(&["check", "--unknown-flag"])), 2);
}
