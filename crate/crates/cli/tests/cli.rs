use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bwgnn_core::synth::SynthSpec;
use serde_json::Value;

fn bwgnn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwgnn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn write_spec(dir: &Path) {
    let spec = SynthSpec::ba_gaussian(300, 3, 0.1, 5.0, 4, 1);
    fs::write(dir.join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
}

#[test]
fn synth_analyze_train_eval_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_spec(dir);

    let o = bwgnn(&["synth", "spec.json", "--out", "data"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).ends_with("manifest.json"));

    let o = bwgnn(&["analyze", "data", "--feature", "1"], dir);
    assert!(o.status.success());
    let profile: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(profile["kind"], "energy_profile");
    assert_eq!(profile["report"]["eigenvalues"].as_array().unwrap().len(), 300);

    let o = bwgnn(&["analyze", "data", "--drop", "anomalies", "--out", "shift.json"], dir);
    assert!(o.status.success());
    let shift: Value = serde_json::from_str(&fs::read_to_string(dir.join("shift.json")).unwrap()).unwrap();
    assert_eq!(shift["kind"], "shift_report");

    fs::write(dir.join("train.json"), r#"{"epochs": 5}"#).unwrap();
    fs::write(dir.join("model.json"), r#"{"hidden_dim": 8}"#).unwrap();
    let o = bwgnn(
        &["train", "data", "--train-config", "train.json", "--model-config", "model.json", "--out", "m"],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trained: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(dir.join("m/checkpoint.json").exists());
    assert!(dir.join("m/metrics.json").exists());

    let o = bwgnn(&["eval", "m/checkpoint.json", "data", "--mask", "test"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let evaluated: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(evaluated["report"]["confusion"], trained["report"]["confusion"]);
    assert_eq!(evaluated["report"]["auc"], trained["report"]["auc"]);
}

#[test]
fn wavelet_prints_response_csv() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bank.json"), r#"{"order": 3, "taus": [2.0], "grid_step": 0.5}"#).unwrap();
    let o = bwgnn(&["wavelet", "bank.json"], tmp.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    // Long format: one row per kernel and grid point.
    assert_eq!(lines[0], "kernel_id,p,q,w,g_of_w");
    assert_eq!(lines.len(), 1 + (4 + 1) * 5);
    assert!(lines.iter().any(|l| l.starts_with("heat_2,")));
}

#[test]
fn validation_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_spec(dir);
    assert!(bwgnn(&["synth", "spec.json", "--out", "data"], dir).status.success());

    let o = bwgnn(&["analyze", "data", "--feature", "99"], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("feature"));

    let o = bwgnn(&["train", "data", "--laplacian", "regular"], dir);
    assert_eq!(o.status.code(), Some(2));

    fs::write(dir.join("bad.json"), r#"{"order": 2, "bogus": 1}"#).unwrap();
    let o = bwgnn(&["wavelet", "bad.json"], dir);
    assert_eq!(o.status.code(), Some(2));

    let o = bwgnn(&["experiment", "no_such_thing"], dir);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("right_shift") && err.contains("train_eval"), "{err}");

    let o = bwgnn(&["frobnicate"], dir);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn io_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bwgnn(&["analyze", "missing_dir"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing_dir"));
}

#[test]
fn experiment_is_reproducible_from_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let a = bwgnn(&["experiment", "kernel_gallery", "--seed", "3", "--out", "a"], dir);
    let b = bwgnn(&["experiment", "kernel_gallery", "--seed", "3", "--out", "b"], dir);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).len(), 64);
    let mut names: Vec<_> = fs::read_dir(dir.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "kernel_gallery_report.json"));
    for n in names {
        assert_eq!(fs::read(dir.join("a").join(&n)).unwrap(), fs::read(dir.join("b").join(&n)).unwrap());
    }
}
