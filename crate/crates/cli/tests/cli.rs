use std::fs;
use std::process::{Command, Output};

fn epichaos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epichaos")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn missing_data_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = epichaos(&["case2", "fit", "--data", "/nonexistent/h.csv", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/h.csv"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nbogus = 3\n").unwrap();
    let o = epichaos(&["quad-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unknown_flag_is_rejected() {
    assert_eq!(code(&epichaos(&["case1", "--frobnicate"])), 1);
}

#[test]
fn order_does_not_apply_to_synth() {
    assert_eq!(code(&epichaos(&["synth", "--order", "3", "--out", "/tmp/unused"])), 1);
}

#[test]
fn perturbed_quadrature_fails_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.cfg");
    fs::write(&cfg, "[quad_check]\nmax_points = 8\nperturb = 1e-3\n").unwrap();
    let o = epichaos(&["quad-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn small_quad_check_passes_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q");
    let o = epichaos(&["quad-check", "--order", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("quad_check.csv")).unwrap();
    assert!(csv.starts_with("# epichaos "));
    assert!(csv.contains("# config-sha256: "));
    assert!(out.join("quad_check.json").exists());
}

#[test]
fn synth_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("s");
    assert_eq!(code(&epichaos(&["synth", "--out", synth.to_str().unwrap()])), 0);
    let data = synth.join("synthetic_admissions.csv");
    let fit = dir.path().join("f");
    let o = epichaos(&["case2", "fit", "--data", data.to_str().unwrap(), "--out", fit.to_str().unwrap()]);
    assert!(code(&o) == 0 || code(&o) == 2, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("case2_fit.json")).unwrap()).unwrap();
    assert!(json["meta"]["config_sha256"].is_string());
}
