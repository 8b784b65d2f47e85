//! The `waveopt` binary: every subcommand on a tiny configuration, plus the
//! error contract.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "schedule": {"steps": 6},
  "denoiser": {"model": {"width": 8}, "train": {"steps": 20, "eval_samples": 4, "log_every": 10}},
  "optimization": {"iters": 2, "lr": 0.1, "scan_stride": 3},
  "estimator": {
    "model": {"image_widths": [4, 4, 8], "wavelet_widths": [4, 4, 4], "heads": 2, "head_width": 4},
    "train": {"epochs": 2, "batch": 8}
  },
  "corpus": {"n_per_class": 5, "size": 16},
  "benchmark": {"methods": ["nti", "npi", "nti+woe", "npi+woe", "cfg"]}
}"#;

fn waveopt(out: &Path, args: &[&str]) -> Output {
    let config = out.join("config.json");
    if !config.exists() {
        std::fs::create_dir_all(out).unwrap();
        std::fs::write(&config, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_waveopt"))
        .arg("--config")
        .arg(&config)
        .arg("--seed")
        .arg("7")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(out: &Path, args: &[&str]) -> Value {
    let o = waveopt(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn err_json(out: &Path, args: &[&str]) -> Value {
    let o = waveopt(out, args);
    assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn every_subcommand_runs_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(ok_json(out, &["gen-corpus"])["images"], 10);
    ok_json(
        out,
        &["train-denoiser", "--corpus", out.join("corpus").to_str().unwrap()],
    );
    assert!(out.join("denoiser/manifest.json").exists());

    let scan = ok_json(out, &["scan", "--image", "1"]);
    assert!(scan["endpoint"].as_u64().unwrap() <= 6);
    assert!(out.join("scan_001/scan.csv").exists());

    let ds = ok_json(out, &["build-dataset"]);
    assert!(ds["pairs"]["train"].as_u64().unwrap() >= 2);
    ok_json(out, &["profile", "--dataset", out.join("dataset").to_str().unwrap()]);
    let profile: Value = serde_json::from_slice(&std::fs::read(out.join("profile.json")).unwrap()).unwrap();
    assert_eq!(profile.as_array().unwrap().len(), 10);
    assert!(profile[0]["endpoint"].is_u64());

    ok_json(out, &["train-estimator"]);
    assert!(out.join("estimator/metrics.csv").exists());
    let eval = ok_json(out, &["eval-estimator"]);
    assert!(eval["test"]["mae"].as_f64().unwrap().is_finite());

    let image = std::fs::read_dir(out.join("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "pgm"))
        .unwrap();
    let edited = ok_json(
        out,
        &[
            "edit",
            "--image",
            image.to_str().unwrap(),
            "--src-token",
            "1",
            "--edit-token",
            "2",
            "--method",
            "npi+woe",
        ],
    );
    assert!(edited["report"]["endpoint"].as_u64().unwrap() >= 1);
    assert!(out.join("edit.pgm").exists());

    let bench = ok_json(out, &["benchmark"]);
    assert_eq!(bench["rows"].as_array().unwrap().len(), 5);
    assert_eq!(bench["rows"][0]["psnr_ratio"], 1.0);
    assert!(out.join("benchmark.csv").exists());
}

#[test]
fn failures_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let e = err_json(out, &["scan"]);
    assert_eq!(e["error"]["kind"], "io");
    assert!(e["error"]["message"].as_str().unwrap().contains("manifest.json"));

    let e = err_json(
        out,
        &[
            "edit",
            "--image",
            "x.pgm",
            "--src-token",
            "1",
            "--edit-token",
            "1",
            "--method",
            "warp",
        ],
    );
    assert_eq!(e["error"]["kind"], "usage");

    let bad = out.join("bad.json");
    std::fs::write(&bad, "{\"corpus\": 3}").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_waveopt"))
        .args([
            "--config",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "gen-corpus",
        ])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["error"]["kind"], "json");
}
