use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use pds_cli::service::{router, AppState, StartupError};
use pds_core::io::{self, RunConfig};
use pds_core::synthetic;

fn prepared() -> (io::PreparedModel, io::Dataset) {
    let config = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/config.json")).unwrap();
    let dataset = io::load_dataset(&config).unwrap();
    (io::prepare_inputs(&dataset, &config).unwrap(), dataset)
}

fn state(cache_dir: Option<&Path>) -> Arc<AppState> {
    let (p, d) = prepared();
    Arc::new(AppState::new(p, d.storage_truth, cache_dir.map(Path::to_path_buf), 2).unwrap())
}

async fn call(state: &Arc<AppState>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(body: impl Into<Body>) -> Request<Body> {
    Request::post("/api/runs").header("content-type", "application/json").body(body.into()).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn spec_json(spec: &pds_core::ScenarioSpec) -> String {
    serde_json::to_string(spec).unwrap()
}

#[tokio::test]
async fn runs_are_content_addressed() {
    let s = state(None);
    let (status, a) = call(&s, post(spec_json(&synthetic::baseline_scenario()))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, b) = call(&s, post(spec_json(&synthetic::baseline_scenario()))).await;
    assert_eq!(a["run_id"], b["run_id"]);
    let (_, c) = call(&s, post(spec_json(&synthetic::flood_scenario()))).await;
    assert_ne!(a["run_id"], c["run_id"]);
    assert_eq!(a["run_id"].as_str().unwrap().len(), 64);
}

#[tokio::test]
async fn trace_slices() {
    let s = state(None);
    let (_, r) = call(&s, post(spec_json(&synthetic::flood_scenario()))).await;
    let id = r["run_id"].as_str().unwrap();

    let (status, all) = call(&s, get(&format!("/api/runs/{id}/trace?metric=pct_undernourished"))).await;
    assert_eq!(status, StatusCode::OK);
    let series = all["series"].as_array().unwrap();
    assert_eq!(series.len(), 75);
    assert!(series.iter().all(|x| x["values"].as_array().unwrap().len() == 52));

    let (status, one) = call(&s, get(&format!("/api/runs/{id}/trace?district=60&metric=procured_storage"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["series"].as_array().unwrap().len(), 1);
    assert_eq!(one["series"][0]["district_id"], 60);
    assert_eq!(one["metric"], "procured_storage");

    let (default_status, default) = call(&s, get(&format!("/api/runs/{id}/trace"))).await;
    assert_eq!(default_status, StatusCode::OK);
    assert_eq!(default["metric"], "pct_undernourished");

    for bad in ["metric=bogus", "district=abc", "district=999", "colour=red"] {
        let (status, body) = call(&s, get(&format!("/api/runs/{id}/trace?{bad}"))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert!(body["error"].is_string());
    }

    let (status, storage) = call(&s, get(&format!("/api/runs/{id}/storage"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(storage["model"].as_array().unwrap().len(), 12);
}

#[tokio::test]
async fn unknown_runs_are_not_found() {
    let s = state(None);
    let (status, _) = call(&s, get(&format!("/api/runs/{}/trace", "0".repeat(64)))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&s, get("/api/runs/../trace")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_specs_map_to_client_errors() {
    let s = state(None);
    let (status, _) = call(&s, post("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut spec = synthetic::flood_scenario();
    if let pds_core::ScenarioEvent::Flood { destroyed_fraction, .. } = &mut spec.events[0] {
        *destroyed_fraction = 2.0;
    }
    let (status, _) = call(&s, post(spec_json(&spec))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let spec = synthetic::flood_scenario_for(&[pds_core::DistrictId(4242)]);
    let (status, body) = call(&s, post(spec_json(&spec))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("4242"));
}

#[tokio::test]
async fn districts_endpoint_mirrors_the_dataset() {
    let s = state(None);
    let (status, body) = call(&s, get("/api/districts")).await;
    assert_eq!(status, StatusCode::OK);
    let rows = body.as_array().unwrap();
    assert_eq!(rows.len(), 75);
    let (p, d) = prepared();
    for (row, rec) in rows.iter().zip(&d.districts) {
        assert_eq!(row["id"], rec.id.0);
        assert_eq!(row["name"], rec.name.as_str());
        assert_eq!(row["total_pop"], rec.total_population);
        assert_eq!(row["rural_pop"], rec.rural_population);
        assert_eq!(row["urban_pop"], rec.urban_population);
        assert_eq!(row["avg_family_size"].as_f64().unwrap(), rec.avg_family_size);
    }
    assert_eq!(rows[0]["baseline_pct_undernourished"].as_f64().unwrap(), p.inputs.baseline_pct[0]);
}

#[test]
fn empty_dataset_is_refused_at_startup() {
    let (mut p, _) = prepared();
    p.inputs.districts.clear();
    assert!(matches!(AppState::new(p, vec![], None, 1), Err(StartupError::EmptyDataset)));
}

#[tokio::test]
async fn disk_cache_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = state(Some(dir.path()));
    let (_, r) = call(&first, post(spec_json(&synthetic::flood_scenario()))).await;
    let id = r["run_id"].as_str().unwrap().to_string();
    let (_, before) = call(&first, get(&format!("/api/runs/{id}/trace?district=70"))).await;
    assert!(dir.path().join(format!("{id}.json")).exists());
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));

    let restarted = state(Some(dir.path()));
    assert_eq!(restarted.fingerprint(), first.fingerprint());
    let (status, after) = call(&restarted, get(&format!("/api/runs/{id}/trace?district=70"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let s = state(None);
    let body = spec_json(&synthetic::flood_scenario());
    let tasks: Vec<_> = (0..6)
        .map(|_| {
            let s = Arc::clone(&s);
            let body = body.clone();
            tokio::spawn(async move { call(&s, post(body)).await })
        })
        .collect();
    let mut ids = Vec::new();
    for t in tasks {
        let (status, v) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        ids.push(v["run_id"].clone());
    }
    ids.dedup();
    assert_eq!(ids.len(), 1);
}
