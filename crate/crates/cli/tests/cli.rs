use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cab_core::synthdata::read_dataset;
use serde_json::Value;

fn cab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cab"))
        .args(args)
        .env("CAB_OUT_DIR", dir)
        .output()
        .expect("cab binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TOY: [&str; 14] = [
    "gen-data", "--task", "imputation", "--t", "96", "--d", "8", "--mask-ratio", "0.25", "--lags", "0:1:7@0.8", "--seed",
    "1", "--out",
];

const TINY_MODEL: [&str; 12] = [
    "--h", "2", "--d-model", "4", "--d-k", "4", "--d-ff", "8", "--blocks", "1", "--epochs", "1",
];

fn small_data(dir: &Path, task: &str) {
    let out = cab(
        &["gen-data", "--task", task, "--t", "16", "--d", "3", "--samples", "10", "--lags", "0:1:3@0.8", "--out", "small"],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn gen_data_writes_three_masked_splits() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TOY.to_vec();
    args.push("toy");
    let out = cab(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let mut total = 0;
    for split in ["train", "val", "test"] {
        let data = read_dataset(dir.path().join(format!("toy.{split}"))).unwrap();
        assert_eq!((data.t_len, data.d), (96, 8));
        for s in &data.samples {
            assert_eq!(s.hidden_count(), 192);
        }
        total += data.samples.len();
    }
    assert_eq!(total, 200);
}

#[test]
fn gen_data_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let mut args = TOY.to_vec();
        args.push(name);
        assert!(cab(&args, dir.path()).status.success());
    }
    for split in ["train", "val", "test"] {
        let a = fs::read(dir.path().join(format!("a.{split}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b.{split}"))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn missing_required_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = cab(&["gen-data", "--task", "imputation"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("--out") && err.contains("Usage"), "{err}");
}

#[test]
fn invalid_values_are_usage_errors_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = cab(&["gen-data", "--task", "forecast", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--task"));

    let out = cab(&["gen-data", "--task", "imputation", "--t", "8", "--lags", "0:1:9", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("0:1:9"), "{}", stderr(&out));
}

#[test]
fn missing_files_exit_with_the_file_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = cab(&["train", "--data", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    small_data(dir.path(), "imputation");
    let out = cab(&["eval", "--data", "small", "--checkpoint", "none.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let out = cab(&["train", "--data", "small", "--config", "none.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergent_training_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "imputation");
    let mut args = vec!["train", "--data", "small", "--optimizer", "sgd", "--lr", "1e300", "--metrics", "m.ndjson"];
    args.extend(&TINY_MODEL[..10]);
    args.extend(["--epochs", "3"]);
    let out = cab(&args, dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("m.ndjson")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["kind"], "error");
}

#[test]
fn cab_on_and_off_both_report_imputation_errors() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "imputation");
    let mut hashes = Vec::new();
    for switch in ["on", "off"] {
        let mut args = vec!["train", "--data", "small", "--model", "transformer", "--cab", switch];
        args.extend(TINY_MODEL);
        let out = cab(&args, dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
        let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["kind"], "summary");
        assert!(summary["test"]["mse"].as_f64().unwrap() > 0.0);
        assert!(summary["test"]["mae"].as_f64().unwrap() > 0.0);
        let run_id = summary["run_id"].as_str().unwrap();
        let log = fs::read_to_string(dir.path().join(format!("{run_id}.ndjson"))).unwrap();
        let kinds: Vec<String> = log
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, ["epoch", "summary"]);
        assert!(dir.path().join(format!("{run_id}.ckpt")).exists());
        hashes.push(summary["config_hash"].clone());
    }
    assert_ne!(hashes[0], hashes[1]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "classification");
    fs::write(
        dir.path().join("run.cfg"),
        "# tiny classifier\nh = 2\nm = 1\nd_model = 4\nd_k = 4\nd_ff = 8\nblocks = 1\nepochs = 3\n",
    )
    .unwrap();
    let out = cab(&["train", "--data", "small", "--config", "run.cfg", "--epochs", "1"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["epochs_run"], 1);
    assert!(summary["test"]["accuracy"].is_number());

    fs::write(dir.path().join("bad.cfg"), "heads = 2\n").unwrap();
    let out = cab(&["train", "--data", "small", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("heads"));
}

#[test]
fn anomaly_runs_report_detection_scores() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "anomaly");
    let mut args = vec!["train", "--data", "small", "--model", "nonstationary", "--checkpoint", "a.ckpt"];
    args.extend(TINY_MODEL);
    let out = cab(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["precision", "recall", "f1", "threshold"] {
        assert!(summary["test"][key].is_number(), "{key} missing: {summary}");
    }
    let out = cab(&["eval", "--data", "small", "--checkpoint", "a.ckpt", "--metrics", "eval.ndjson"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let record: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["test"], summary["test"]);
    assert!(dir.path().join("eval.ndjson").exists());
}

#[test]
fn ablation_flag_is_rejected_by_ablate_and_with_cab_off() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "imputation");
    let out = cab(&["ablate", "--data", "small", "--ablation", "pure"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = cab(&["train", "--data", "small", "--cab", "off", "--ablation", "static"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_prints_a_csv_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = cab(&["bench", "--t", "32,64", "--dk", "2", "--reps", "2", "--warmup", "1", "--out", "b.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().next().unwrap(), "op,t,d_k,reps,median_s,min_s,max_s");
    assert_eq!(table.lines().count(), 7);
    assert_eq!(fs::read_to_string(dir.path().join("b.csv")).unwrap(), table);
}
