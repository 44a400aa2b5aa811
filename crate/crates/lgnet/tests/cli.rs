//! End-to-end runs of the `lgnet` binary on a tiny corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lgnet::checkpoint::{Checkpoint, SavedModel};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "hidden=4",
    "memory_slots=4",
    "slot_dim=6",
    "snippet_count=32",
    "batch_size=8",
    "critic_conv1=2",
    "critic_conv2=3",
    "critic_hidden=8",
    "critic_steps=2",
    "missing_ratio=0.2",
];

fn lgnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgnet")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, samples: usize) -> PathBuf {
    let path = dir.join("data.csv");
    let o = lgnet(&["synth", "--out", path.to_str().unwrap(), "--samples", &samples.to_string(), "--vars", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

/// Arguments for a two-epoch run on `data` writing into `out`.
fn run_args(data: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "--data".into(),
        data.display().to_string(),
        "--output-dir".into(),
        out.display().to_string(),
        "--epochs".into(),
        "2".into(),
    ];
    for s in SMALL {
        v.push("--set".into());
        v.push((*s).into());
    }
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train".to_string()];
    args.extend(run_args(data, out, extra));
    let o = Command::new(env!("CARGO_BIN_EXE_lgnet")).args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn load(run: &Path) -> SavedModel {
    SavedModel::from_checkpoint(&Checkpoint::load(&run.join("checkpoint.lgnet")).unwrap()).unwrap()
}

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 40);
    (dir, data)
}

#[test]
fn missing_data_file_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.csv");
    let o = lgnet(&["train", "--data", missing.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn training_is_deterministic_and_replays_from_its_snapshot() {
    let (dir, data) = setup();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    train(&data, &a, &["--seed", "7"]);
    train(&data, &b, &["--seed", "7"]);
    let log = fs::read(a.join("metrics.jsonl")).unwrap();
    assert_eq!(log, fs::read(b.join("metrics.jsonl")).unwrap());
    // Metadata records the output directory; the tensors must agree exactly.
    let (ca, cb) = (load(&a), load(&b));
    assert_eq!(ca.model, cb.model);
    assert_eq!(ca.critic, cb.critic);
    assert_eq!(String::from_utf8(log.clone()).unwrap().lines().count(), 2);

    let snapshot = a.join("config.resolved");
    let o = lgnet(&["train", "--config", snapshot.to_str().unwrap(), "--output-dir", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(log, fs::read(c.join("metrics.jsonl")).unwrap());
}

#[test]
fn lambda_zero_leaves_no_critic() {
    let (dir, data) = setup();
    let (adv, plain) = (dir.path().join("adv"), dir.path().join("plain"));
    train(&data, &adv, &[]);
    train(&data, &plain, &["--lambda", "0"]);
    assert!(load(&adv).critic.is_some());
    assert!(load(&plain).critic.is_none());
    let log = fs::read_to_string(plain.join("metrics.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains(r#""critic_loss":null"#)));
}

fn eval_rows(csv: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(csv).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn evaluation_reproduces_the_best_validation_score() {
    let (dir, data) = setup();
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let ck = run.join("checkpoint.lgnet");
    let out = dir.path().join("val.csv");
    let o = lgnet(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--split", "validation", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = eval_rows(&out);
    let all = rows.iter().find(|r| r[0] == "all").unwrap();
    let eval_rmse: f64 = all[1].parse().unwrap();

    let best = fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["val_rmse"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!((eval_rmse - best).abs() < 1e-9, "{eval_rmse} vs {best}");

    let h2 = dir.path().join("h2.csv");
    let o = lgnet(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--horizon", "2", "--out", h2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = eval_rows(&h2);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "2");

    let o = lgnet(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--horizon", "4"]);
    assert_eq!(o.status.code(), Some(2));

    // Unknown format versions are refused.
    let mut bytes = fs::read(&ck).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    let bad = dir.path().join("future.lgnet");
    fs::write(&bad, bytes).unwrap();
    let o = lgnet(&["evaluate", "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version 99"), "{}", stderr(&o));
}

#[test]
fn too_few_windows_for_a_test_split_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 6);
    let mut args = vec!["train".to_string()];
    args.extend(run_args(&data, &dir.path().join("out"), &[]));
    let o = Command::new(env!("CARGO_BIN_EXE_lgnet")).args(&args).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_variant_is_rejected_with_the_valid_names() {
    let (dir, data) = setup();
    let mut args = vec!["ablate".to_string(), "--variants".into(), "full,no_lstm".into()];
    args.extend(run_args(&data, &dir.path().join("out"), &[]));
    let o = Command::new(env!("CARGO_BIN_EXE_lgnet")).args(&args).output().unwrap();
    assert!(!o.status.success());
    let err = stderr(&o);
    for name in ["no_lstm", "full", "no_memory", "no_adversarial"] {
        assert!(err.contains(name), "{name} missing from: {err}");
    }
}

#[test]
fn single_ratio_sweep_matches_one_training_run() {
    let (dir, data) = setup();
    let run = dir.path().join("run");
    train(&data, &run, &["--missing-ratio", "0.3"]);
    let mut args = vec!["sweep".to_string(), "--missing-ratios".into(), "0.3".into()];
    let sweep = dir.path().join("sweep");
    args.extend(run_args(&data, &sweep, &[]));
    let o = Command::new(env!("CARGO_BIN_EXE_lgnet")).args(&args).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let trained = eval_rows(&run.join("test_metrics.csv"));
    let rmse = &trained.iter().find(|r| r[0] == "all").unwrap()[1];
    let swept = eval_rows(&sweep.join("sweep.csv"));
    let row = swept.iter().find(|r| r[1] == "lgnet").unwrap();
    assert_eq!(row[0], "0.3");
    assert_eq!(&row[2], rmse);
}
