use std::path::Path;
use std::process::{Command, Output};

fn sleepvis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sleepvis"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, backend: serde_json::Value) -> String {
    let cfg = serde_json::json!({
        "data_dir": "data",
        "output_dir": "out",
        "synth": {"nights": 1, "epochs_per_night": 24},
        "training": {"max_epochs": 2, "batch_size": 16},
        "backend": backend,
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sleepvis(&[]).status.code(), Some(2));
    assert_eq!(sleepvis(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sleepvis(&["train", "--fold", "x"]).status.code(), Some(2));
    assert_eq!(sleepvis(&["--help"]).status.code(), Some(0));
}

#[test]
fn seed_and_backend_flags_reach_the_config() {
    let out = sleepvis(&["--seed", "5", "--backend", "/opt/be", "--print-config", "evaluate"]);
    ok(&out);
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["fold_seed"], 5);
    assert_eq!(cfg["training"]["seed"], 5);
    assert_eq!(cfg["backend"]["mode"], "external");
    assert_eq!(cfg["backend"]["executable"], "/opt/be");
}

#[test]
fn stages_through_the_external_backend() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = dir.path().join("train.json");
    std::fs::write(&train_cfg, r#"{"max_epochs": 2, "batch_size": 16}"#).unwrap();
    let backend = serde_json::json!({
        "mode": "external",
        "executable": env!("CARGO_BIN_EXE_sleepvis-backend"),
        "extra_args": ["--config", train_cfg.display().to_string()],
        "timeout_s": 600,
    });
    let cfg = write_config(dir.path(), backend);
    for cmd in ["synth", "ingest", "render", "split"] {
        ok(&sleepvis(&["--config", &cfg, cmd]));
    }

    let early = sleepvis(&["--config", &cfg, "predict", "--fold", "0"]);
    assert_eq!(early.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&early.stderr).contains("model.meta.json"));

    ok(&sleepvis(&["--config", &cfg, "--jobs", "1", "train", "--fold", "0"]));
    let log = std::fs::read_to_string(dir.path().join("out/models/fold_0/training_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    ok(&sleepvis(&["--config", &cfg, "predict", "--fold", "0"]));
    assert!(dir.path().join("out/predictions/fold_0/probs.tnsr").is_file());

    let folds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/folds/index.json")).unwrap()).unwrap();
    let subject = folds[0]["test_subject"].as_str().unwrap();
    ok(&sleepvis(&["--config", &cfg, "sensitivity", "--subject", subject, "--stage", "N2"]));
    assert!(dir.path().join(format!("out/sensitivity/sensmap_{subject}_N2.png")).is_file());

    // the remaining folds have no predictions yet
    assert_eq!(sleepvis(&["--config", &cfg, "evaluate"]).status.code(), Some(1));
}
