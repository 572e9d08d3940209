//! End-to-end tests of the `dpml` binary: artifacts, determinism, resume,
//! and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_CFG: &str = "\
seed = 3
epochs = 2
batch_size = 8
span_iters = 2
inner_steps = 2
alpha = 0.01
beta = 0.2
learning_rate = 0.001
latent_dim = 4
encoder_hidden = 8,8
decoder_hidden = 8,8
baseline_epochs = 5
synth_stocks = 3
synth_days = 30
synth_slots = 14
";

fn dpml(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpml"))
        .current_dir(dir)
        .env_clear()
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = dpml(dir, args);
    assert!(
        out.status.success(),
        "dpml {args:?} failed (exit {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Writes the tiny config and generates its panel; returns (config, data).
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    ok(dir, &["gen-data", "--config", "tiny.cfg", "--out", "gen"]);
    (cfg, dir.join("gen/data.csv"))
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn gen_data_is_deterministic_and_counts_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("big.cfg"), TINY_CFG).unwrap();
    for out in ["a", "b"] {
        ok(
            dir,
            &[
                "gen-data", "--config", "big.cfg", "--set", "synth_stocks=10", "--set",
                "synth_days=60", "--set", "synth_slots=13", "--out", out,
            ],
        );
    }
    let a = read(&dir.join("a/data.csv"));
    assert_eq!(a, read(&dir.join("b/data.csv")), "same seed must give identical bytes");

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("stock_id,day,slot,open,high,low,close,volume"));
    assert_eq!(lines.count(), 10 * 60 * 13, "one row per stock, day and slot");
    assert!(text.lines().any(|l| l.starts_with("# fingerprint: ")));
}

#[test]
fn train_writes_artifacts_and_reruns_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    for out in ["r1", "r2"] {
        ok(dir, &["train", "--config", "tiny.cfg", "--data", "gen/data.csv", "--out", out]);
    }
    for name in ["model_best.ckpt", "model_last.ckpt", "train_log.jsonl", "loss_curve.svg"] {
        assert_eq!(
            read(&dir.join("r1").join(name)),
            read(&dir.join("r2").join(name)),
            "{name} must be bitwise reproducible"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("r1/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 4);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let with = |extra: &[&'static str]| -> Vec<&'static str> {
        let mut v = vec!["train", "--config", "tiny.cfg", "--data", "gen/data.csv"];
        v.extend_from_slice(extra);
        v
    };
    ok(dir, &with(&["--set", "epochs=4", "--out", "straight"]));
    ok(dir, &with(&["--set", "epochs=2", "--out", "resumed"]));
    ok(dir, &with(&["--set", "epochs=4", "--out", "resumed", "--resume"]));
    for name in ["model_best.ckpt", "model_last.ckpt", "train_log.jsonl", "loss_curve.svg"] {
        assert_eq!(
            read(&dir.join("straight").join(name)),
            read(&dir.join("resumed").join(name)),
            "{name} must not depend on the interruption"
        );
    }
}

#[test]
fn repeat_trains_consecutive_seeds_and_summarizes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(
        dir,
        &[
            "train", "--config", "tiny.cfg", "--set", "epochs=1", "--data", "gen/data.csv",
            "--repeat", "2", "--out", "rep",
        ],
    );
    assert!(dir.join("rep/seed-3/model_best.ckpt").exists());
    assert!(dir.join("rep/seed-4/model_best.ckpt").exists());
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("rep/summary.json"))).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    let seeds: Vec<u64> = rows.iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [3, 4]);
    assert!(summary["dev_mse_mean"].as_f64().unwrap().is_finite());
}

#[test]
fn eval_reports_every_model_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(dir, &["train", "--config", "tiny.cfg", "--data", "gen/data.csv", "--out", "run"]);
    let eval = |out: &str| {
        ok(
            dir,
            &[
                "eval", "--checkpoint", "run/model_best.ckpt", "--data", "gen/data.csv",
                "--split", "test", "--dump-predictions", "--out", out,
            ],
        )
    };
    eval("e1");
    eval("e2");
    assert_eq!(read(&dir.join("e1/report.json")), read(&dir.join("e2/report.json")));

    let table = fs::read_to_string(dir.join("e1/report.txt")).unwrap();
    for row in [
        "Yesterday",
        "20-day Average",
        "20-day EMA",
        "Last Time Slot",
        "12-slot Average",
        "12-slot EMA",
        "20-day and 12-slot Average",
        "Linear Regression",
        "DPML",
    ] {
        assert!(table.contains(row), "report.txt misses the {row} row:\n{table}");
    }
    assert!(table.starts_with("# manifest: "));

    let preds = fs::read_to_string(dir.join("e1/predictions.csv")).unwrap();
    let mut lines = preds.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: "));
    assert_eq!(lines.next(), Some("stock_id,day,slot,y,y_hat,v_last"));
    assert!(lines.next().is_some(), "predictions.csv must hold data rows");
}

#[test]
fn eval_rejects_data_with_another_fingerprint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(dir, &["train", "--config", "tiny.cfg", "--data", "gen/data.csv", "--out", "run"]);
    ok(dir, &["gen-data", "--config", "tiny.cfg", "--seed", "99", "--out", "gen99"]);
    let out = dpml(
        dir,
        &[
            "eval", "--checkpoint", "run/model_best.ckpt", "--data", "gen99/data.csv",
            "--out", "ev",
        ],
    );
    assert_eq!(out.status.code(), Some(5), "fingerprint mismatch must exit 5");
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn ablate_names_the_rows_it_compares() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(
        dir,
        &[
            "ablate", "--config", "tiny.cfg", "--set", "epochs=1", "--data", "gen/data.csv",
            "--out", "ab",
        ],
    );
    let table = fs::read_to_string(dir.join("ab/ablate_table.txt")).unwrap();
    for label in [
        "DPML",
        "w/o tasks",
        "w/o encoder",
        "w/o encoder,latent variables",
        "w/o encoder,decoder",
        "w/o inner meta-learning",
        "w/o unique decoder",
    ] {
        assert!(table.contains(label), "ablate table misses {label:?}:\n{table}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("ab/ablate_report.json"))).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 7);
}

#[test]
fn verify_accepts_faithful_runs_and_flags_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(dir, &["verify", "--out", "gen"]);

    let data = dir.join("gen/data.csv");
    let mut bytes = read(&data);
    bytes.extend_from_slice(b"# tampered\n");
    fs::write(&data, bytes).unwrap();
    let out = dpml(dir, &["verify", "--out", "gen"]);
    assert_eq!(out.status.code(), Some(6), "tampering must exit 6");
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.csv"));
}

#[test]
fn invalid_config_and_missing_data_have_distinct_exits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let bad = dpml(
        dir,
        &[
            "train", "--config", "tiny.cfg", "--set", "epochs=banana", "--data", "gen/data.csv",
            "--out", "x",
        ],
    );
    assert_eq!(bad.status.code(), Some(2));

    let missing = dpml(
        dir,
        &["train", "--config", "tiny.cfg", "--data", "nope.csv", "--out", "x"],
    );
    assert_eq!(missing.status.code(), Some(3));
}
