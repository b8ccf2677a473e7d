use std::path::Path;
use std::process::Command;

use saliency::cli::run;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["saliency"];
    argv.extend_from_slice(args);
    let code = run(argv, None, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, count: &str, seed: &str) {
    let (code, _, err) = call(&[
        "synth", "--count", count, "--seed", seed, "--vocab-size", "60", "--max-len", "10", "--min-len", "6",
        "--name", name, "--out", path(dir),
    ]);
    assert_eq!(code, 0, "{err}");
}

const SMALL_MODEL: &[&str] = &["--embed-dim", "8", "--max-len", "10", "--epochs", "3", "--lr", "1e-3"];

fn train(dir: &Path, data: &Path, extra: &[&str]) -> Vec<u8> {
    let mut args = vec!["train", "--train", path(data), "--out", path(dir)];
    args.extend_from_slice(SMALL_MODEL);
    args.extend_from_slice(extra);
    let (code, _, err) = call(&args);
    assert_eq!(code, 0, "{err}");
    std::fs::read(dir.join("model.ckpt")).unwrap()
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "data", "100", "7");
    synth(b.path(), "data", "100", "7");
    for f in ["data.jsonl", "vocab.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(std::fs::read_to_string(a.path().join("data.jsonl")).unwrap().lines().count(), 100);
}

#[test]
fn zero_lambda_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "train", "60", "1");
    let data = dir.path().join("train.jsonl");
    let plain = tempfile::tempdir().unwrap();
    let zero = tempfile::tempdir().unwrap();
    let again = tempfile::tempdir().unwrap();
    let a = train(plain.path(), &data, &[]);
    let b = train(zero.path(), &data, &["--lambda", "0"]);
    let c = train(again.path(), &data, &[]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(
        std::fs::read(plain.path().join("train_log.jsonl")).unwrap(),
        std::fs::read(again.path().join("train_log.jsonl")).unwrap()
    );
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "train", "200", "2");
    synth(dir.path(), "test", "60", "3");
    let train_data = dir.path().join("train.jsonl");
    let test_data = dir.path().join("test.jsonl");
    let base = dir.path().join("base");
    let sal = dir.path().join("sal");
    train(&base, &train_data, &["--dev", path(&test_data)]);
    train(&sal, &train_data, &["--lambda", "0.5"]);
    let base_ckpt = base.join("model.ckpt");
    let sal_ckpt = sal.join("model.ckpt");
    let log = std::fs::read_to_string(base.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 1);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["dev"]["f1"].is_number());

    let report = dir.path().join("report");
    let (code, out, err) = call(&["eval", "--model", path(&sal_ckpt), "--data", path(&test_data), "--out", path(&report)]);
    assert_eq!(code, 0, "{err}");
    let metrics: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert!(metrics["s_acc"]["word"].is_number());
    assert!(report.join("metrics.json").is_file());

    let (code, out, err) = call(&["verify", "--model", path(&sal_ckpt), "--data", path(&test_data), "--out", path(&report)]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("delta_tpr"));

    let (code, out, err) = call(&[
        "compare", "--a", path(&base_ckpt), "--b", path(&sal_ckpt), "--data", path(&test_data), "--out", path(&report),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("p_value"));

    let maps = dir.path().join("maps");
    let (code, _, err) = call(&[
        "saliency", "--model", path(&sal_ckpt), "--baseline", path(&base_ckpt), "--data", path(&test_data),
        "--limit", "3", "--out", path(&maps),
    ]);
    assert_eq!(code, 0, "{err}");
    let page = std::fs::read_to_string(maps.join("heatmap_0000.html")).unwrap();
    assert!(page.contains("baseline:") && page.contains("saliency:"));
    assert!(!maps.join("heatmap_0003.html").exists());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("count = 30\nseed = 4\nout = {}\n", path(dir.path()))).unwrap();
    let (code, _, err) = call(&["synth", "--config", path(&cfg), "--count", "12"]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(dir.path().join("data.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn usage_and_validation_errors_exit_one() {
    assert_eq!(call(&["frobnicate"]).0, 1);
    assert_eq!(call(&["synth", "--bogus"]).0, 1);
    assert_eq!(call(&[]).0, 1);
    assert_eq!(call(&["eval", "--model", "/nonexistent/model.ckpt", "--data", "/nonexistent/x"]).0, 1);
    assert_eq!(call(&["synth", "--mode", "poetry"]).0, 1);
    assert_eq!(call(&["synth", "--windows", "2,4"]).0, 1);
    let (code, out, _) = call(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("gradcheck"));
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "train", "40", "5");
    let data = dir.path().join("train.jsonl");
    let (code, _, err) = call(&[
        "train", "--train", path(&data), "--out", path(dir.path()), "--embed-dim", "4", "--max-len", "10",
        "--epochs", "30", "--lr", "1e306", "--patience", "none",
    ]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn binary_gradcheck_reports_and_uses_env_seed() {
    let out = Command::new(env!("CARGO_BIN_EXE_saliency"))
        .args(["gradcheck", "--d", "8", "--n", "6"])
        .env("SF_SEED", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("example ")).count(), 5);

    let bad = Command::new(env!("CARGO_BIN_EXE_saliency"))
        .args(["gradcheck"])
        .env("SF_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
