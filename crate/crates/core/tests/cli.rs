use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detect-lab"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn threshold_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["threshold", "--n", "1000000", "--info-rate", "0.1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("threshold.json"));
    let t = v["temporal_part"]["required_horizon"].as_f64().unwrap();
    assert!((t - 138.155).abs() < 1e-3);
}

#[test]
fn static_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--seed", "3", "simulate-static", "--n", "300", "--p", "0.05", "--k", "20", "--delta", "0.4"], dir.path());
    assert!(o.status.success());
    let graph = dir.path().join("graph.txt");
    let o = run(&["--seed", "4", "detect-static", "--graph", graph.to_str().unwrap(), "--k", "20", "--prune", "--calib-replicates", "40"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("verdict.json"));
    for key in ["statistic", "threshold", "reject", "candidate_set", "iterations_used"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["reject"], true);
    assert_eq!(v["candidate_set"].as_array().unwrap().len(), 20);
}

#[test]
fn temporal_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "5", "simulate-temporal", "--n", "4", "--mu", "1", "--delta", "3", "--k", "2", "--tau", "40", "--horizon", "150"];
    assert!(run(&args, dir.path()).status.success());
    let events = dir.path().join("events.csv");
    assert!(dir.path().join("events.csv.meta.json").exists());
    let o = run(
        &["--seed", "6", "detect-temporal", "--events", events.to_str().unwrap(), "--mu", "1", "--delta", "3", "--alpha", "0.001", "--calib-replicates", "100", "--dump-path"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("alarm.json"));
    assert_eq!(v["false_alarm"], false);
    assert!(v["delay"].as_f64().unwrap() < 20.0);
    let path = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert!(path.starts_with("bin,G\n"));
}

#[test]
fn calibrate_prints_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["calibrate", "--target-arl", "50", "--replicates", "100"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("b = "));
    let v = json(&dir.path().join("calibration.json"));
    assert!(v["ci_low"].as_f64().unwrap() >= 50.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // infeasible parameters
    let o = run(&["threshold", "--n", "1", "--info-rate", "0.1"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["simulate-static", "--n", "100", "--p", "0.7", "--k", "10", "--delta", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["simulate-temporal", "--n", "3", "--horizon", "10", "--hawkes", "0.9,1,0.5"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    // config problems
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown = 1\n").unwrap();
    let o = bin().args(["--config", bad.to_str().unwrap(), "case-study"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["--config", "/definitely/missing.toml", "case-study"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["threshold", "--no-such-flag"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["detect-temporal", "--events", "/definitely/missing.csv", "--mu", "1", "--delta", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn case_study_from_json_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"case_study": {"k": 1000}}"#).unwrap();
    let o = bin().args(["--config", cfg.to_str().unwrap(), "--out"]).arg(dir.path()).arg("case-study").output().unwrap();
    assert!(o.status.success());
    assert_eq!(json(&dir.path().join("case_study.json"))["k"], 1000);
}
