use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &[&str] = &["--d-v", "4", "--d1", "3", "--d-nv", "6", "--d-f", "4"];

fn intent(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intent"))
        .arg("--out-dir")
        .arg(dir.join("runs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["--seed", "5", "synth", "--out", path_str(&out)];
    args.extend_from_slice(extra);
    ok(intent(dir, &args));
    out
}

fn train(dir: &Path, data: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("model");
    let mut args = vec![
        "--seed",
        "5",
        "train",
        "--data",
        path_str(data),
        "--out",
        path_str(&out),
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--epochs", "2", "--learning-rate", "0.001"]);
    args.extend_from_slice(extra);
    ok(intent(dir, &args));
    out
}

#[test]
fn synth_zero_count_writes_empty_file() {
    let dir = TempDir::new().unwrap();
    let out = synth(dir.path(), "empty.jsonl", &["--count", "0"]);
    assert_eq!(std::fs::read(out).unwrap().len(), 0);
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "a.jsonl", &["--count", "6"]);
    let b = synth(dir.path(), "b.jsonl", &["--count", "6"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert!(dir.path().join("runs/synth.manifest.json").exists());
}

#[test]
fn synth_rejects_too_many_segments() {
    let dir = TempDir::new().unwrap();
    let out = intent(dir.path(), &["synth", "--segments", "20", "--count", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = intent(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = intent(dir.path(), &["train", "--data", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_then_eval_reproduces_training_metrics() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "data.jsonl", &["--count", "20"]);
    let model = train(dir.path(), &data, &[]);
    let ckpt = model.join("checkpoint.json");
    let report = json(model.join("train_report.json"));
    assert!(model.join("train.manifest.json").exists());

    let eval_out = dir.path().join("eval_train.json");
    ok(intent(
        dir.path(),
        &[
            "eval",
            "--data",
            path_str(&data),
            "--checkpoint",
            path_str(&ckpt),
            "--split",
            "train",
            "--out",
            path_str(&eval_out),
        ],
    ));
    let eval = json(&eval_out);
    assert_eq!(eval["split"], "train");
    assert_eq!(eval["metrics"], report["final_train"]);

    let val_out = dir.path().join("eval_val.json");
    ok(intent(
        dir.path(),
        &[
            "eval",
            "--data",
            path_str(&data),
            "--checkpoint",
            path_str(&ckpt),
            "--split",
            "val",
            "--out",
            path_str(&val_out),
        ],
    ));
    assert_eq!(json(&val_out)["metrics"], report["final_val"]);

    // Evaluating twice gives byte-identical reports.
    let again = dir.path().join("eval_again.json");
    ok(intent(
        dir.path(),
        &[
            "eval",
            "--data",
            path_str(&data),
            "--checkpoint",
            path_str(&ckpt),
            "--split",
            "train",
            "--out",
            path_str(&again),
        ],
    ));
    let strip = |p: &Path| {
        let mut v = json(p);
        v.as_object_mut().unwrap().remove("checkpoint");
        v.as_object_mut().unwrap().remove("data");
        v
    };
    assert_eq!(strip(&eval_out), strip(&again));
    let manifest = json(dir.path().join("runs/eval.manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert!(manifest["artifact_hashes"].as_object().is_some_and(|h| !h.is_empty()));
}

#[test]
fn training_twice_is_bitwise_identical() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "data.jsonl", &["--count", "12"]);
    let first = train(dir.path(), &data, &[]);
    let ckpt_a = std::fs::read(first.join("checkpoint.json")).unwrap();
    let report_a = std::fs::read(first.join("train_report.json")).unwrap();
    let second = train(dir.path(), &data, &[]);
    assert_eq!(ckpt_a, std::fs::read(second.join("checkpoint.json")).unwrap());
    assert_eq!(report_a, std::fs::read(second.join("train_report.json")).unwrap());
}

#[test]
fn eval_with_mismatched_width_names_the_block() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "data.jsonl", &["--count", "8"]);
    let model = train(dir.path(), &data, &[]);
    let out = intent(
        dir.path(),
        &[
            "eval",
            "--data",
            path_str(&data),
            "--checkpoint",
            path_str(&model.join("checkpoint.json")),
            "--d-v",
            "5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("encoder.visual_stub"));
}

#[test]
fn sweep_accepts_single_and_degenerate_cluster_counts() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "data.jsonl", &["--count", "10"]);
    for list in ["3", "1"] {
        let table = dir.path().join(format!("sweep_{list}.json"));
        let mut args = vec![
            "sweep-m",
            "--data",
            path_str(&data),
            "--m-list",
            list,
            "--out",
            path_str(&table),
        ];
        args.extend_from_slice(SMALL);
        args.extend_from_slice(&["--epochs", "1"]);
        let out = ok(intent(dir.path(), &args));
        assert!(String::from_utf8_lossy(&out.stdout).contains("val_f1"));
        let rows = json(&table)["rows"].as_array().unwrap().clone();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0]["config"]["M"], list.parse::<u64>().unwrap());
    }
}

#[test]
fn inspect_dumps_events_and_trace() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "clean.jsonl", &["--count", "4", "--noise", "0"]);
    let model = train(dir.path(), &data, &[]);
    let ckpt = model.join("checkpoint.json");

    let missing = intent(
        dir.path(),
        &[
            "inspect",
            "--data",
            path_str(&data),
            "--checkpoint",
            path_str(&ckpt),
            "--sample-id",
            "nobody",
        ],
    );
    assert_ne!(missing.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nobody"));

    let out = ok(intent(
        dir.path(),
        &[
            "inspect",
            "--data",
            path_str(&data),
            "--checkpoint",
            path_str(&ckpt),
            "--sample-id",
            "synth-00000",
        ],
    ));
    let dump: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["sample_id", "label", "planted_segments", "visual", "nonvisual", "trace"] {
        assert!(dump.get(key).is_some(), "missing {key}");
    }
    let rho = dump["visual"]["density"]["rho"].as_array().unwrap();
    assert_eq!(rho.len(), 16);
    let alpha: f64 = dump["trace"]["visual"]["alpha"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((alpha - 1.0).abs() <= 1e-12);

    // With no noise the clustering reproduces the planted segments exactly.
    let assignment: Vec<u64> = dump["visual"]["events"]["assignment"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let mut planted = vec![0u64; 16];
    for seg in dump["planted_segments"].as_array().unwrap() {
        let (start, end) = (seg["start_frame"].as_u64().unwrap(), seg["end_frame"].as_u64().unwrap());
        for t in start..=end {
            planted[t as usize] = seg["segment_id"].as_u64().unwrap();
        }
    }
    assert_eq!(assignment, planted);
}
