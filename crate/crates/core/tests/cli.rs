//! Exit codes and end-to-end behavior of the `mespot` binary.

use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mespot");

fn mespot(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("running the mespot binary")
}

#[test]
fn missing_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let small = dir.path().join("small.toml");
    std::fs::write(&small, "[synth]\nn_train = 2\nn_val = 1\nn_test = 1\nclip_length = 60\nclips_per_subject = 1\n").unwrap();
    let out = mespot(&["synth", "--config", small.to_str().unwrap(), "--out", corpus.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = corpus.join("manifest.json");
    let out = mespot(&[
        "spot",
        "--manifest",
        manifest.to_str().unwrap(),
        "--model",
        "nope.bin",
        "--out",
        dir.path().join("spots").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model not found"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(mespot(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mespot(&["spot", "--seed", "x"]).status.code(), Some(2));
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = \"many\"\n").unwrap();
    let out = mespot(&["synth", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tiny_pipeline_reports_metrics_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.toml");
    std::fs::write(
        &small,
        "[synth]\nn_train = 4\nn_val = 1\nn_test = 2\nclip_length = 60\nclips_per_subject = 2\n\
         [train]\npretrain_epochs = 1\nepochs = 1\ninstances_per_epoch = 16\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = mespot(&["pipeline", "--seed", "3", "--config", small.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    for key in ["precision", "recall"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    if let Some(auc) = report["auc"].as_f64() {
        assert!((0.0..=1.0).contains(&auc));
    }
    assert!(run.join("model.bin").is_file());
}
