use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orbstab::maneuver::ManeuverDocument;
use orbstab::synthesis::GainScheduleDocument;

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

fn root(rel: &str) -> PathBuf {
    Path::new(ROOT).join(rel)
}

fn orbstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbstab")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn copy_butterfly_artifacts(dir: &Path) {
    for f in ["maneuver.json", "gains.json"] {
        fs::copy(root("artifacts/butterfly").join(f), dir.join(f)).unwrap();
    }
}

const DI_CONFIG: &str = "configs/double_integrator.toml";
const BF_CONFIG: &str = "configs/butterfly.toml";

#[test]
fn double_integrator_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = root(DI_CONFIG);
    for cmd in ["plan", "synth", "verify", "simulate"] {
        let o = orbstab(&[cmd, "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["maneuver.json", "plan_report.json", "gains.json", "certificate.json", "verify_report.json", "nominal.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // Re-running verify on the produced artifacts passes again.
    assert_eq!(code(&orbstab(&["verify", "--config", s(&cfg), "--out", s(out)])), 0);
}

#[test]
fn planning_is_deterministic_and_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = root(DI_CONFIG);
    for d in [&a, &b] {
        assert_eq!(code(&orbstab(&["plan", "--config", s(&cfg), "--out", s(d)])), 0);
    }
    let ta = fs::read_to_string(a.join("maneuver.json")).unwrap();
    assert_eq!(ta, fs::read_to_string(b.join("maneuver.json")).unwrap());
    let doc: ManeuverDocument = serde_json::from_str(&ta).unwrap();
    assert_eq!(serde_json::to_string_pretty(&doc).unwrap() + "\n", ta);

    let tg = fs::read_to_string(root("artifacts/butterfly/gains.json")).unwrap();
    let g: GainScheduleDocument = serde_json::from_str(&tg).unwrap();
    assert_eq!(serde_json::to_string_pretty(&g).unwrap() + "\n", tg);
    let tm = fs::read_to_string(root("artifacts/butterfly/maneuver.json")).unwrap();
    let m: ManeuverDocument = serde_json::from_str(&tm).unwrap();
    assert_eq!(serde_json::to_string_pretty(&m).unwrap() + "\n", tm);
}

#[test]
fn flat_profile_fails_the_existence_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[model]
kind = "butterfly"
[profile]
kind = "polynomial"
theta = []
s_alpha = 0.0
s_omega = 2.0
[projection]
kind = "saturation"
index = 1
scale = 1.0
offset = 0.0
"#,
    );
    let o = orbstab(&["plan", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_model_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[profile]
kind = "rest_to_rest"
q_alpha = 0.0
q_omega = 1.0
kappa = 1.0
[projection]
kind = "euclidean"
"#,
    );
    assert_eq!(code(&orbstab(&["plan", "--config", s(&cfg), "--out", s(dir.path())])), 3);
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&orbstab(&["plan", "--config", s(&missing), "--out", s(dir.path())])), 3);
}

#[test]
fn grid_smaller_than_the_order_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(root(DI_CONFIG)).unwrap().replace("order = 2", "order = 6");
    let cfg = write_config(dir.path(), &text);
    assert_eq!(code(&orbstab(&["plan", "--config", s(&cfg), "--out", s(dir.path())])), 0);
    let o = orbstab(&["synth", "--config", s(&cfg), "--out", s(dir.path()), "--grid", "3"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn excessive_decay_rate_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(root(DI_CONFIG)).unwrap().replace("lambda = 0.0", "lambda = 1e6");
    let cfg = write_config(dir.path(), &text);
    assert_eq!(code(&orbstab(&["plan", "--config", s(&cfg), "--out", s(dir.path())])), 0);
    let o = orbstab(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("block"));
}

#[test]
fn shipped_butterfly_artifacts_verify() {
    let dir = tempfile::tempdir().unwrap();
    copy_butterfly_artifacts(dir.path());
    let o = orbstab(&["verify", "--config", s(&root(BF_CONFIG)), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn tampered_gains_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    copy_butterfly_artifacts(dir.path());
    let path = dir.path().join("gains.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let c = &mut doc["y"]["coefficients"][3][1];
    *c = serde_json::json!(c.as_f64().unwrap() * 2.0);
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let o = orbstab(&["verify", "--config", s(&root(BF_CONFIG)), "--out", s(dir.path())]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn mismatched_dimensions_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_butterfly_artifacts(dir.path());
    let o = orbstab(&["verify", "--config", s(&root(DI_CONFIG)), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_butterfly_artifacts(dir.path());
    let o = orbstab(&["simulate", "--config", s(&root(BF_CONFIG)), "--out", s(dir.path()), "--scenario", "fig9"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn butterfly_nominal_scenario_converges() {
    let dir = tempfile::tempdir().unwrap();
    copy_butterfly_artifacts(dir.path());
    let cfg = root(BF_CONFIG);
    let args = ["simulate", "--config", s(&cfg), "--out", s(dir.path()), "--scenario", "fig8", "--seed", "3"];
    let o = orbstab(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("fig8.csv")).unwrap();
    assert!(csv.starts_with("t,x0,x1,x2,x3,u0,s,region,"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("simulation_summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["converged"], serde_json::json!(true));
}
