use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

fn pds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pds")).args(args).output().unwrap()
}

fn config() -> String {
    dataset().join("config.json").display().to_string()
}

#[test]
fn validate_succeeds_on_the_shipped_dataset() {
    let out = pds(&["validate", "--config", &config()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("75 districts"));
}

#[test]
fn broken_dataset_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    for e in fs::read_dir(dataset()).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            fs::copy(&p, dir.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    let adj = dir.path().join("adjacency.csv");
    fs::write(&adj, fs::read_to_string(&adj).unwrap() + "4,404\n").unwrap();
    let out = pds(&["validate", "--config", &dir.path().join("config.json").display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("404"));
}

#[test]
fn unknown_flood_district_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    let text = fs::read_to_string(dataset().join("scenarios/flood.json")).unwrap().replacen("55", "555", 1);
    fs::write(&spec, text).unwrap();
    let out = pds(&["simulate", "--config", &config(), "--scenario", &spec.display().to_string(), "--out", &dir.path().join("t.csv").display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("555"));
}

#[test]
fn missing_config_is_a_runtime_error() {
    let out = pds(&["validate", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn batch_runs_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = pds(&[
        "simulate",
        "--config",
        &config(),
        "--batch",
        &dataset().join("scenarios").display().to_string(),
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["baseline.csv", "flood.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), 1 + 52 * 75 * pds_core::Metric::ALL.len());
    }
    let single = dir.path().join("single.csv");
    pds(&["simulate", "--config", &config(), "--scenario", &dataset().join("scenarios/flood.json").display().to_string(), "--out", &single.display().to_string()]);
    assert_eq!(fs::read(single).unwrap(), fs::read(dir.path().join("flood.csv")).unwrap());
}

#[test]
fn estimate_rations_writes_all_stages() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cards.csv");
    let out = pds(&["estimate-rations", "--config", &config(), "--out", &path.display().to_string()]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(path).unwrap();
    for stage in ["raw", "imputed", "scaled", "capped"] {
        assert_eq!(text.lines().filter(|l| l.split(',').nth(1) == Some(stage)).count(), 75, "{stage}");
    }
}

#[test]
fn calibrate_reports_metrics() {
    let out = pds(&["calibrate", "--config", &config()]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["months"].as_array().unwrap().len(), 12);
    assert!(report["rmse_tonnes"].as_f64().unwrap() >= 0.0);
}
