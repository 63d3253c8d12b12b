use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_mine");

fn mine(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn small(model: &str, out: &Path) -> Value {
    json!({
        "model": model,
        "seed": 5,
        "out_dir": out,
        "calibration": { "n_samples": 1200, "burn_in": 200 },
        "dataset": { "forward_n": 120, "quantile_n": 300 },
        "quantile": { "epochs": 20 },
        "aeode": { "train": { "batch": 32, "iters": 30, "eval_every": 10 } },
        "evaluate": { "quantile_inputs": 2 },
        "ensemble": { "n_draws": 10 },
        "verify": {
            "shift_instances": 5, "product_instances": 3, "mixture_instances": 1,
            "finite_chain": { "ns": [50, 200], "reference_size": 2000, "seeds": 3 }
        }
    })
}

fn run_ok(stage: &str, cfg: &Path) {
    let o = mine(&[stage, "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_field_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &json!({ "seed": 1 }));
    let o = mine(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model"));

    let cfg = write(dir.path(), "d.json", &json!({ "model": "himmel" }));
    let o = mine(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.json", &json!({ "model": "himmel", "seed": 1, "bogus": 3 }));
    assert_eq!(mine(&["calibrate", "--config", unknown.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(mine(&["calibrate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let short = write(
        dir.path(),
        "s.json",
        &json!({ "model": "himmel", "seed": 1, "calibration": { "init_theta": [1.0] } }),
    );
    assert_eq!(mine(&["calibrate", "--config", short.to_str().unwrap()]).status.code(), Some(2));
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "h.json", &small("himmel", &out));
    assert_eq!(mine(&["train-quantile", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn missing_upstream_artifacts_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "h.json", &small("himmel", &out));
    let o = mine(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn himmel_pipeline_reports_are_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "h.json", &small("himmel", &out));
    for stage in ["calibrate", "generate", "train-forward", "evaluate", "ensemble", "verify-bounds"] {
        run_ok(stage, &cfg);
    }
    for name in [
        "chain.json",
        "calibration_report.json",
        "forward.json",
        "forward_model.json",
        "evaluation.json",
        "ensemble.json",
        "bounds_report.json",
    ] {
        let v: Value = serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1, "{name}");
        assert_eq!(v["global_seed"], 5, "{name}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("calibration_report.json")).unwrap()).unwrap();
    assert_eq!(report["post_burn_in_rows"], 1000);
    let csv = fs::read_to_string(out.join("ensemble_band_A.csv")).unwrap();
    assert!(csv.starts_with("t,q05,q50,q95\n"));
    let eval: Value = serde_json::from_str(&fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert!(eval["forward"]["eval"]["metrics"]["mse"].as_f64().unwrap().is_finite());
}

#[test]
fn fairlite_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "f.json", &small("fairlite", &out));
    for stage in ["calibrate", "generate", "train-quantile", "train-forward", "evaluate", "ensemble"] {
        run_ok(stage, &cfg);
    }
    let eval: Value = serde_json::from_str(&fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    let cov = eval["quantile"]["mean_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));
    assert!(out.join("ensemble_band_T.csv").exists());
}

#[test]
fn tampering_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "h.json", &small("himmel", &out));
    for stage in ["calibrate", "generate", "train-forward"] {
        run_ok(stage, &cfg);
    }
    let cfg_s = cfg.to_str().unwrap();

    let records = out.join("forward.mine");
    let original = fs::read(&records).unwrap();
    let mut bytes = original.clone();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&records, &bytes).unwrap();
    assert_eq!(mine(&["evaluate", "--config", cfg_s]).status.code(), Some(3));
    fs::write(&records, &original).unwrap();
    run_ok("evaluate", &cfg);

    // A regenerated chain invalidates every downstream artifact.
    let o = mine(&["calibrate", "--config", cfg_s, "--seed", "6"]);
    assert!(o.status.success());
    assert_eq!(mine(&["evaluate", "--config", cfg_s]).status.code(), Some(3));
    assert_eq!(mine(&["train-forward", "--config", cfg_s]).status.code(), Some(3));
}

#[test]
fn calibrate_is_deterministic_and_seed_overridable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "h.json", &small("himmel", &out));
    let cfg_s = cfg.to_str().unwrap();
    let read = |d: &Path| (fs::read(d.join("chain.csv")).unwrap(), fs::read(d.join("chain.json")).unwrap());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for d in [&a, &b] {
        assert!(mine(&["calibrate", "--config", cfg_s, "--out", d.to_str().unwrap()]).status.success());
    }
    assert!(mine(&["calibrate", "--config", cfg_s, "--out", c.to_str().unwrap(), "--seed", "9", "--threads", "1"])
        .status
        .success());
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a).0, read(&c).0);
}

#[test]
fn verify_bounds_default_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write(dir.path(), "v.json", &json!({ "model": "himmel", "seed": 2, "out_dir": out }));
    let o = mine(&["verify-bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(out.join("bounds_report.json")).unwrap()).unwrap();
    assert_eq!(r["passed"], true);
    assert_eq!(r["shift"]["instances"], 100);
    assert!(fs::read_to_string(out.join("finite_chain.csv")).unwrap().starts_with("N,"));
}
