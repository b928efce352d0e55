//! HTTP service over scenario runs.
//!
//! Runs are keyed by a content hash of the prepared dataset and the parsed
//! scenario, cached in memory and optionally on disk.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

use pds_core::calibration::{aggregate_to_state_monthly, MonthlyStorage};
use pds_core::domain::{kg_to_tonnes, DistrictId};
use pds_core::io::PreparedModel;
use pds_core::scenario::{self, Metric, ScenarioError, ScenarioSpec, SimulationTrace};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("dataset has no districts")]
    EmptyDataset,
}

pub struct AppState {
    prepared: Arc<PreparedModel>,
    storage_truth: Vec<MonthlyStorage>,
    fingerprint: String,
    cache: Mutex<HashMap<String, Arc<SimulationTrace>>>,
    cache_dir: Option<PathBuf>,
    workers: Semaphore,
}

impl AppState {
    pub fn new(
        prepared: PreparedModel,
        storage_truth: Vec<MonthlyStorage>,
        cache_dir: Option<PathBuf>,
        workers: usize,
    ) -> Result<Self, StartupError> {
        if prepared.inputs.districts.is_empty() {
            return Err(StartupError::EmptyDataset);
        }
        let bytes = serde_json::to_vec(&prepared.inputs).expect("inputs serialize");
        let fingerprint = hex::encode(Sha256::digest(&bytes));
        Ok(Self {
            prepared: Arc::new(prepared),
            storage_truth,
            fingerprint,
            cache: Mutex::new(HashMap::new()),
            cache_dir,
            workers: Semaphore::new(workers.max(1)),
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn run_id(&self, spec: &ScenarioSpec) -> String {
        let mut h = Sha256::new();
        h.update(self.fingerprint.as_bytes());
        h.update(b"\n");
        h.update(serde_json::to_vec(spec).expect("spec serializes"));
        hex::encode(h.finalize())
    }

    fn cache_path(&self, id: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn lookup(&self, id: &str) -> Option<Arc<SimulationTrace>> {
        if let Some(t) = self.cache.lock().unwrap().get(id) {
            return Some(Arc::clone(t));
        }
        let bytes = fs::read(self.cache_path(id)?).ok()?;
        let trace: Arc<SimulationTrace> = Arc::new(serde_json::from_slice(&bytes).ok()?);
        self.cache.lock().unwrap().insert(id.to_string(), Arc::clone(&trace));
        Some(trace)
    }

    fn store(&self, id: &str, trace: Arc<SimulationTrace>) -> std::io::Result<()> {
        if let Some(path) = self.cache_path(id) {
            let dir = path.parent().expect("cache file has a parent");
            fs::create_dir_all(dir)?;
            let tmp = dir.join(format!(".{id}.{:?}.tmp", std::thread::current().id()));
            fs::write(&tmp, serde_json::to_vec(&*trace)?)?;
            fs::rename(&tmp, &path)?;
        }
        self.cache.lock().unwrap().insert(id.to_string(), trace);
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/runs", post(create_run))
        .route("/api/runs/{id}/trace", get(run_trace))
        .route("/api/runs/{id}/storage", get(run_storage))
        .route("/api/districts", get(districts))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn status_of(e: &ScenarioError) -> StatusCode {
    match e {
        ScenarioError::InvalidSpec(_) | ScenarioError::Params(_) => StatusCode::BAD_REQUEST,
        ScenarioError::UnknownDistrict { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        ScenarioError::ZeroProduction { .. } | ScenarioError::Inputs(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn create_run(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let spec: ScenarioSpec = serde_json::from_slice(&body).map_err(|e| bad_request(format!("invalid scenario: {e}")))?;
    spec.validate().map_err(|e| ApiError(status_of(&e), e.to_string()))?;
    let id = state.run_id(&spec);
    if state.lookup(&id).is_some() {
        return Ok(Json(json!({ "run_id": id })));
    }
    let _permit = state.workers.acquire().await.expect("semaphore open");
    // Another request may have finished the same run while we waited.
    if state.lookup(&id).is_some() {
        return Ok(Json(json!({ "run_id": id })));
    }
    let worker = Arc::clone(&state);
    let run_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let trace = scenario::run(&spec, &worker.prepared.inputs).map_err(|e| ApiError(status_of(&e), e.to_string()))?;
        worker
            .store(&run_id, Arc::new(trace))
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("run cache: {e}")))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(json!({ "run_id": id })))
}

#[derive(Serialize)]
struct SeriesOut {
    district_id: DistrictId,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct TraceOut {
    run_id: String,
    scenario: String,
    metric: &'static str,
    weeks: Vec<u32>,
    dates: Vec<String>,
    series: Vec<SeriesOut>,
}

fn find_run(state: &AppState, id: &str) -> Result<Arc<SimulationTrace>, ApiError> {
    let well_formed = id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit());
    well_formed
        .then(|| state.lookup(id))
        .flatten()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown run {id}")))
}

async fn run_trace(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<TraceOut>, ApiError> {
    let trace = find_run(&state, &id)?;
    if let Some(key) = params.keys().find(|k| *k != "district" && *k != "metric") {
        return Err(bad_request(format!("unknown filter `{key}`")));
    }
    let metric = match params.get("metric").map(String::as_str) {
        None | Some("") => Metric::PctUndernourished,
        Some(name) => Metric::from_name(name).ok_or_else(|| bad_request(format!("unknown metric `{name}`")))?,
    };
    let positions: Vec<usize> = match params.get("district").map(String::as_str) {
        None | Some("") => (0..trace.district_ids.len()).collect(),
        Some(raw) => {
            let id: u32 = raw.parse().map_err(|_| bad_request(format!("district `{raw}` is not an id")))?;
            let pos = trace
                .district_ids
                .iter()
                .position(|d| d.0 == id)
                .ok_or_else(|| bad_request(format!("district {id} is not in the dataset")))?;
            vec![pos]
        }
    };
    Ok(Json(TraceOut {
        run_id: id,
        scenario: trace.scenario.clone(),
        metric: metric.name(),
        weeks: trace.weeks.iter().map(|w| w.week.0).collect(),
        dates: trace.weeks.iter().map(|w| w.date.to_string()).collect(),
        series: positions
            .into_iter()
            .map(|p| SeriesOut { district_id: trace.district_ids[p], values: trace.series(metric, p) })
            .collect(),
    }))
}

fn months(series: &[MonthlyStorage]) -> Vec<serde_json::Value> {
    series.iter().map(|m| json!({ "month": m.label(), "tonnes": kg_to_tonnes(m.storage_kg) })).collect()
}

/// State storage by month next to the observed series.
async fn run_storage(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let trace = find_run(&state, &id)?;
    Ok(Json(json!({
        "run_id": id,
        "model": months(&aggregate_to_state_monthly(&trace)),
        "truth": months(&state.storage_truth),
    })))
}

#[derive(Serialize)]
struct DistrictOut<'a> {
    id: DistrictId,
    name: &'a str,
    total_pop: u64,
    rural_pop: u64,
    urban_pop: u64,
    avg_family_size: f64,
    baseline_pct_undernourished: f64,
    weekly_consumption_tonnes: f64,
}

async fn districts(State(state): State<Arc<AppState>>) -> Response {
    let inputs = &state.prepared.inputs;
    let out: Vec<DistrictOut<'_>> = inputs
        .districts
        .iter()
        .enumerate()
        .map(|(i, d)| DistrictOut {
            id: d.id,
            name: &d.name,
            total_pop: d.total_population,
            rural_pop: d.rural_population,
            urban_pop: d.urban_population,
            avg_family_size: d.avg_family_size,
            baseline_pct_undernourished: inputs.baseline_pct[i],
            weekly_consumption_tonnes: kg_to_tonnes(inputs.weekly_consumption[i]),
        })
        .collect();
    Json(out).into_response()
}
