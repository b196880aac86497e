//! End-to-end runs of the `dragpart` binary.

use std::path::Path;
use std::process::{Command, Output};

use dragpart::config::ExperimentConfig;
use dragpart::motion::oracle_benchmark;
use serde_json::Value;

fn dragpart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dragpart")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::smoke();
    cfg.train.steps = 2;
    cfg.sample.steps = 2;
    cfg.dataset.assets = 2;
    let path = dir.join("smoke.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_gen_validate_and_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("train");
    let gen = stdout_json(&dragpart(&["--config", &cfg, "--out", s(&data), "dataset", "gen"]));
    assert_eq!(gen["animations"], 4);

    let ok = dragpart(&["dataset", "validate", s(&data)]);
    let report = stdout_json(&ok);
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));

    let anim = data.join("anim_0001");
    std::fs::copy(anim.join("frame_01.png"), anim.join("frame_00.png")).unwrap();
    let bad = dragpart(&["dataset", "validate", s(&data)]);
    assert_eq!(bad.status.code(), Some(3));
    let err = stderr_json(&bad);
    assert_eq!(err["kind"], "validation");
    assert_eq!(err["oracle"], "stored_images");
}

#[test]
fn bad_config_is_a_structured_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\nunknown_key = 2\n").unwrap();
    let out = dragpart(&["--config", s(&path), "dataset", "gen", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"].as_str().unwrap().contains("unknown_key"));

    let mut cfg = ExperimentConfig::smoke();
    cfg.model.image = dragpart_core::GridSize::square(64);
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let out = dragpart(&["--config", s(&path), "dataset", "gen", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["kind"], "config");
}

#[test]
fn train_sample_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let ckpt = tmp.path().join("model.ckpt");
    let summary = stdout_json(&dragpart(&["--config", &cfg, "--out", s(&ckpt), "train"]));
    assert_eq!(summary["steps"], 2);
    assert!(ckpt.exists() && ckpt.with_extension("report.json").exists());

    let data = tmp.path().join("id");
    stdout_json(&dragpart(&["--config", &cfg, "--out", s(&data), "dataset", "gen", "--split", "id"]));
    let anim = data.join("anim_0000");
    let meta: Value = serde_json::from_slice(&std::fs::read(anim.join("metadata.json")).unwrap()).unwrap();
    let drags = tmp.path().join("drags.json");
    std::fs::write(&drags, serde_json::to_vec(&meta["drags"]).unwrap()).unwrap();
    let image = anim.join("frame_00.png");
    let sample = |seed: &str| {
        stdout_json(&dragpart(&[
            "--config", &cfg, "--seed", seed, "sample", "--checkpoint", s(&ckpt), "--image", s(&image), "--drags", s(&drags),
        ]))
    };
    let (a, b, c) = (sample("7"), sample("7"), sample("8"));
    assert_eq!(a["sha256"], b["sha256"]);
    assert_ne!(a["sha256"], c["sha256"]);

    let eval = stdout_json(&dragpart(&["--config", &cfg, "eval", "--checkpoint", s(&ckpt), "--limit", "1"]));
    assert_eq!(eval["examples"].as_array().unwrap().len(), 1);
    assert_eq!(eval["split"], "id");
}

#[test]
fn oracle_segment_sweep_fills_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = stdout_json(&dragpart(&["--config", &cfg, "segment", "sweep"]));
    assert_eq!(out["mode"], "oracle");
    let cells = out["report"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 20);
    assert!(out["checkpoint_hash"].is_null());
}

#[test]
fn motion_estimate_recovers_a_benchmark_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let case = oracle_benchmark(2, 32, 11).unwrap().remove(0);
    let object = tmp.path().join("object.json");
    let grid = tmp.path().join("grid.json");
    let table = tmp.path().join("table.csv");
    std::fs::write(&object, serde_json::to_vec(&case.object).unwrap()).unwrap();
    std::fs::write(&grid, serde_json::to_vec(&case.grid).unwrap()).unwrap();
    let est = stdout_json(&dragpart(&[
        "motion", "estimate", "--object", s(&object), "--grid", s(&grid), "--views", "1", "--table", s(&table),
    ]));
    assert_eq!(est["best"], serde_json::to_value(case.truth).unwrap());
    assert_eq!(est["objective"], 0.0);
    assert!(std::fs::read_to_string(&table).unwrap().lines().count() > 100);
}
