mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use labelnoise::commands::{REPORT_FILE, SUMMARY_FILE};
use labelnoise_core::train::RunReport;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelnoise"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let (train, test) = common::blob_datasets(dir, 3, 40, 4.0);
    let text = format!(
        r#"mode = "full"
dataset = {train:?}
test_dataset = {test:?}
out_dir = "runs/a"

[noise]
kind = "SYM"
rate = 0.2
seed = 1

[train]
epochs = 2
batch_size = 32
transition_samples = 40
seed = 4

[train.schedule]
noise_rate_estimate = 0.2
warmup_epochs = 1
ramp_epochs = 1

[train.model.classifier]
conv_channels = []
hidden = 12

[train.model.policy]
conv_channels = []
{extra}"#
    );
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn two_processes_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut reports = Vec::new();
    for out in ["r1", "r2"] {
        let out = dir.path().join(out);
        let o = run(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r: RunReport = serde_json::from_slice(&fs::read(out.join(REPORT_FILE)).unwrap()).unwrap();
        reports.push(r.without_timing());
        assert!(out.join(SUMMARY_FILE).exists());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = run(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "99",
        "--mode",
        "ce_baseline",
        "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: RunReport = serde_json::from_slice(&fs::read(dir.path().join("runs/a").join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(r.config.seed, 99);
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "unexpected = 1\n");
    let o = run(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    let o = run(&["train", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));

    let o = run(&["verify-causal", "--sizes", "3,3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_grid_cells_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = run(&[
        "grid",
        "--config",
        &cfg,
        "--mode",
        "ce_baseline",
        "--gammas",
        "0",
        "--rates",
        "0.1,1.0",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_causal_prints_a_passing_summary() {
    let o = run(&["verify-causal", "--num-scms", "20", "--seed", "3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["checked"], 20);
}

#[test]
fn corrupt_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = run(&["corrupt", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = String::from_utf8_lossy(&o.stdout).trim().to_string();
    assert!(Path::new(&manifest).exists());

    let out = dir.path().join("t");
    let o = run(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success());
    let o = run(&[
        "evaluate",
        "--checkpoint",
        out.join("checkpoint.bin").to_str().unwrap(),
        "--dataset",
        &manifest,
        "--report",
        out.join(REPORT_FILE).to_str().unwrap(),
        "--record",
        Path::new(&manifest).with_file_name("corruption.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["examples"], 120);
    assert!((0.0..=1.0).contains(&v["accuracy"].as_f64().unwrap()));
    assert!(v["transition"]["frobenius_error"].as_f64().unwrap().is_finite());
}
