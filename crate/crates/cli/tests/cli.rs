use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imcbnn"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_line(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(err.lines().last().expect("error line")).expect("machine-parsable")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn hw_model_mode_two_throughput() {
    let dir = tempfile::tempdir().unwrap();
    let budget = data("budgets/pcm.json");
    let o = run(&["hw-model", "--budget", budget.to_str().unwrap(), "--mode", "2", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("throughput 6.4000 GOPS"), "{}", stdout(&o));
    let v = read_json(&dir.path().join("hw_model.json"));
    assert_eq!(v["evaluation"]["throughput_gops"].as_f64().unwrap(), 6.4);
    assert_eq!(v["seed"], 0);
}

#[test]
fn sample_check_reports_phi() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sample-check", "--z", "1.0", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let v = read_json(&dir.path().join("sample_check.json"));
    let r = &v["results"][0];
    let p = r["p_hat"].as_f64().unwrap();
    let ci = r["ci_half_width"].as_f64().unwrap();
    assert!((r["expected"].as_f64().unwrap() - 0.8413).abs() < 1e-4);
    assert!((p - 0.8413).abs() <= ci, "{p} +/- {ci}");
    assert!(stdout(&o).contains("empirical"));
}

#[test]
fn unknown_flag_exits_with_config_code() {
    let o = run(&["infer", "--definitely-not-a-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"]["kind"], "usage");
}

#[test]
fn missing_file_exits_with_config_code() {
    let o = run(&["hw-model", "--budget", "/nonexistent/budget.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"]["kind"], "io");
}

#[test]
fn infeasible_noise_plane_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let nm = dir.path().join("quiet.json");
    std::fs::write(
        &nm,
        r#"{"prog": {"c2": 0.0, "c1": 0.0, "c0": 0.05, "floor": 0.05},
            "read": {"r0": 0.001, "r1": 0.0},
            "drift": {"nu0": 0.08, "gscale": 28.0, "nu_max": 0.2}}"#,
    )
    .unwrap();
    let o = run(&["sample-check", "--z", "0", "--samples", "100", "--noise-model", nm.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_line(&o)["error"]["kind"], "infeasible");
}

#[test]
fn noise_free_single_sample_matches_mode_forward() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let digits = data("digits.csv");
    let digits = digits.to_str().unwrap();
    assert!(run(&["train", "--data", digits, "--epochs", "3", "--out", d]).status.success());
    let model = dir.path().join("model.json");
    let hw = dir.path().join("hw");
    let fx = dir.path().join("fx");
    let o = run(&["infer", "--model", model.to_str().unwrap(), "--data", digits, "--no-noise", "--n-mc", "1", "--no-ood", "--out", hw.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["infer", "--model", model.to_str().unwrap(), "--data", digits, "--backend", "fixed", "--n-mc", "1", "--no-ood", "--out", fx.to_str().unwrap()]);
    assert!(o.status.success());
    let a = read_json(&hw.join("infer.json"));
    let b = read_json(&fx.join("infer.json"));
    assert_eq!(a["records"], b["records"]);
    assert_eq!(a["config"]["no_noise"], true);
}

#[test]
fn stored_deployment_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let digits = data("digits.csv");
    let digits = digits.to_str().unwrap();
    assert!(run(&["train", "--data", digits, "--epochs", "2", "--out", d]).status.success());
    let model = dir.path().join("model.json");
    assert!(run(&["program", "--model", model.to_str().unwrap(), "--data", digits, "--seed", "5", "--out", d]).status.success());
    let dep = dir.path().join("deployment.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&["infer", "--deployment", dep.to_str().unwrap(), "--data", digits, "--seed", "5", "--n-mc", "2", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["infer", "--model", model.to_str().unwrap(), "--data", digits, "--seed", "5", "--n-mc", "2", "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(read_json(&a.join("infer.json"))["records"], read_json(&b.join("infer.json"))["records"]);
    let o = run(&["infer", "--deployment", dep.to_str().unwrap(), "--data", digits, "--seed", "6", "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
