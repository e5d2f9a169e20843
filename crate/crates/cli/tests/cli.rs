use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filtercontract"))
        .args(args)
        .env_remove("FILTERCONTRACT_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn tightness_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("reports");
    let o = cli(&["tightness", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.trim_end().ends_with("tightness: PASS"));
    let csv = std::fs::read_to_string(out.join("tightness.csv")).unwrap();
    assert!(csv.starts_with("k,distance,bound,ratio,pass"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("tightness.json")).unwrap()).unwrap();
    assert_eq!(json["metadata"]["config"]["seed"], 3);
}

#[test]
fn quiet_prints_only_the_verdict() {
    let o = cli(&["rates", "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "rate_table: PASS\n");
}

#[test]
fn failing_check_exits_one() {
    // A non-normal drift: the noise-free distance no longer matches the bound.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "shear.json",
        r#"{"model": {"kind": "explicit", "alpha": [0, 0], "beta": [[-1, 2], [0, -1]], "sigma": 0, "delta": 0.5},
            "likelihood": {"kind": "constant"}, "k": 5}"#,
    );
    let o = cli(&["tightness", "--config", &cfg, "--quiet"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "tightness: FAIL\n");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mismatched = write(
        dir.path(),
        "m.json",
        r#"{"scenario": "rate_table", "model": {"kind": "isotropic", "dim": 1, "lambda": 1, "sigma": 0, "delta": 1},
            "likelihood": {"kind": "constant"}, "k": 2}"#,
    );
    let o = cli(&["tightness", "--config", &mismatched]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("does not match"));

    let broken = write(dir.path(), "b.json", "{not json");
    assert_eq!(cli(&["kalman-check", "--config", &broken]).status.code(), Some(2));
    assert_eq!(cli(&["kalman-check", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    assert_eq!(cli(&["kalman-check", "--threads", "0"]).status.code(), Some(2));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_filtercontract"))
        .args(["tensor-check", "--quiet", "--out", dir.path().to_str().unwrap()])
        .env("FILTERCONTRACT_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tensor_invariance.json")).unwrap()).unwrap();
    assert_eq!(json["metadata"]["threads"], 2);
    assert_eq!(json["metadata"]["config"]["threads"], 2);
}
