use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kdebias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdebias")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = kdebias(args);
    assert!(
        out.status.success(),
        "kdebias {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic train/test splits in a fresh directory.
fn splits() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--n", "600", "--test-n", "400", "--seed", "3"]);
    (dir, data.join("train.json"), data.join("test.json"))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--rff-dim", "96", "--iters", "3"];

#[test]
fn synth_then_train_writes_model_and_record() {
    let (dir, train, test) = splits();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--manifest", s(&train), "--eval-manifest", s(&test), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    ok(&args);
    assert!(out.join("model.kdbs").is_file());
    let record = json(&out.join("run.json"));
    assert_eq!(record["config"]["rff_dim"], 96);
    assert!(record["timing"]["train_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(record["history"].as_array().unwrap().len(), 4);
    let avg = record["metrics"]["avg"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&avg));
}

#[test]
fn missing_manifest_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = kdebias(&["train", "--manifest", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error [data-io]"), "{stderr}");
    assert!(stderr.contains("absent.json"), "{stderr}");
}

#[test]
fn zero_iterations_keeps_only_the_initial_round() {
    let (dir, train, _) = splits();
    let out = dir.path().join("run");
    ok(&["train", "--manifest", s(&train), "--out", s(&out), "--rff-dim", "64", "--iters", "0"]);
    assert_eq!(json(&out.join("run.json"))["history"].as_array().unwrap().len(), 1);
}

#[test]
fn eval_and_predict_agree_with_each_other() {
    let (dir, train, test) = splits();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--manifest", s(&train), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    ok(&args);
    let model = out.join("model.kdbs");
    let report_path = dir.path().join("eval.json");
    ok(&["eval", "--model", s(&model), "--manifest", s(&test), "--out", s(&report_path), "--skew-k", "50"]);
    let report = json(&report_path);
    for key in ["config", "avg", "wg", "gap", "eod", "groups", "max_skew", "dep_zy", "dep_zs"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["groups"].as_object().unwrap().len(), 4);
    assert!(report["max_skew"].get("class=0").is_some());

    let preds = dir.path().join("preds.csv");
    ok(&["predict", "--model", s(&model), "--manifest", s(&test), "--out", s(&preds)]);
    let yhat: Vec<usize> = csv::Reader::from_path(&preds)
        .unwrap()
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    let y: Vec<usize> = csv::Reader::from_path(test.with_file_name("test_labels.csv"))
        .unwrap()
        .deserialize::<(usize, usize)>()
        .map(|r| r.unwrap().0)
        .collect();
    assert_eq!(yhat.len(), 400);
    let acc = yhat.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 400.0;
    assert!((acc - report["avg"].as_f64().unwrap()).abs() < 1e-12);
}

fn read_sweep(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["tau", "tau_z", "avg", "wg", "gap", "eod", "seconds", "error", "config"]
    );
    reader.records().map(|r| r.unwrap()).collect()
}

#[test]
fn single_cell_sweep_matches_train_then_eval() {
    let (dir, train, test) = splits();
    let out = dir.path().join("run");
    let mut args = vec![
        "train", "--manifest", s(&train), "--out", s(&out), "--tau-i", "0.5", "--tau-t", "0.5", "--tau-z", "0.3",
    ];
    args.extend_from_slice(SMALL);
    ok(&args);
    let report_path = dir.path().join("eval.json");
    ok(&["eval", "--model", s(&out.join("model.kdbs")), "--manifest", s(&test), "--out", s(&report_path)]);
    let report = json(&report_path);

    let sweep = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep", "--manifest", s(&train), "--eval-manifest", s(&test), "--tau", "0.5", "--tau-z-grid", "0.3",
        "--out", s(&sweep),
    ];
    args.extend_from_slice(SMALL);
    ok(&args);
    let rows = read_sweep(&sweep);
    assert_eq!(rows.len(), 1);
    for (col, key) in [(2, "avg"), (3, "wg"), (4, "gap"), (5, "eod")] {
        let got: f64 = rows[0][col].parse().unwrap();
        assert_eq!(got, report[key].as_f64().unwrap(), "{key}");
    }
}

#[test]
fn grid_sweep_fills_every_cell_in_order() {
    let (dir, train, test) = splits();
    let sweep = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep", "--manifest", s(&train), "--eval-manifest", s(&test), "--tau", "0.9,0,0.5", "--tau-z-grid",
        "0.5,0.9,0", "--out", s(&sweep),
    ];
    args.extend_from_slice(SMALL);
    ok(&args);
    let rows = read_sweep(&sweep);
    assert_eq!(rows.len(), 9);
    let keys: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(keys, sorted);
    assert_eq!(keys[0], (0.0, 0.0));
    for row in &rows {
        assert!(row[7].is_empty(), "cell failed: {}", &row[7]);
        for col in 2..7 {
            let v: f64 = row[col].parse().unwrap();
            assert!(v.is_finite());
        }
        let config: Value = serde_json::from_str(&row[8]).unwrap();
        assert_eq!(config["tau_i"].as_f64().unwrap(), row[0].parse::<f64>().unwrap());
    }
}

#[test]
fn invalid_cells_are_recorded_and_the_sweep_continues() {
    let (dir, train, test) = splits();
    let sweep = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep", "--manifest", s(&train), "--eval-manifest", s(&test), "--tau=0.5,-1", "--tau-z-grid", "0",
        "--out", s(&sweep),
    ];
    args.extend_from_slice(SMALL);
    let out = kdebias(&args);
    assert!(!out.status.success());
    let rows = read_sweep(&sweep);
    assert_eq!(rows.len(), 2);
    assert!(rows[0][7].contains("tau_i"), "{}", &rows[0][7]);
    assert!(rows[0][2].is_empty());
    assert!(rows[1][7].is_empty());
}
