//! HTTP service for census runs: run control, cluster state and the human
//! review queue.
//!
//! Every run is owned by a worker thread (see [`worker`]). Handlers only
//! read published snapshots and send decisions to the worker, so reads never
//! wait on the engine.

pub mod clock;
pub mod worker;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use census_core::config::RunConfig;
use census_core::lca::{Decision, LcaError, ReviewOutcome, SubmitResult};
use census_core::state::load_state;
use census_core::stats::{encounters_by_cluster, export_geojson};
use log::warn;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::oneshot;

use clock::Clock;
use worker::{Command, RunMode, RunRecord, RunSpec, ServedDataset, Snapshot, WorkerHandle, RECORD_KIND};

pub const DEFAULT_LEASE_TTL_MS: u64 = 120_000;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot read run database {path}: {source}")]
    Db {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub lease_ttl_ms: u64,
    /// Directory for run snapshots; runs found there are resumed at start.
    pub db: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            lease_ttl_ms: DEFAULT_LEASE_TTL_MS,
            db: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Lease {
    request_id: u64,
    expires_ms: u64,
}

struct RunEntry {
    spec: RunSpec,
    handle: WorkerHandle,
    lease: Mutex<Option<Lease>>,
}

impl RunEntry {
    fn snapshot(&self) -> Arc<Snapshot> {
        self.handle.snapshots.borrow().clone()
    }
}

#[derive(Default)]
struct Runs {
    by_id: BTreeMap<String, Arc<RunEntry>>,
    by_key: BTreeMap<String, String>,
    next: u64,
}

pub struct AppState {
    datasets: BTreeMap<String, Arc<ServedDataset>>,
    runs: Mutex<Runs>,
    clock: Arc<dyn Clock>,
    config: ServerConfig,
}

impl AppState {
    /// Build the service state, resuming any runs stored in `config.db`.
    pub fn new(
        datasets: BTreeMap<String, ServedDataset>,
        clock: Arc<dyn Clock>,
        config: ServerConfig,
    ) -> Result<Arc<Self>, ServerError> {
        let state = Self {
            datasets: datasets.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            runs: Mutex::new(Runs::default()),
            clock,
            config,
        };
        if let Some(dir) = &state.config.db {
            std::fs::create_dir_all(dir).map_err(|source| ServerError::Db {
                path: dir.clone(),
                source,
            })?;
            state.resume_runs(dir)?;
        }
        Ok(Arc::new(state))
    }

    fn resume_runs(&self, dir: &std::path::Path) -> Result<(), ServerError> {
        let entries = std::fs::read_dir(dir).map_err(|source| ServerError::Db {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut runs = self.runs.lock().unwrap();
        for path in paths {
            let record: RunRecord = match load_state(RECORD_KIND, &path) {
                Ok(r) => r,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    continue;
                }
            };
            let handle = match self.datasets.get(&record.spec.dataset) {
                Some(ds) => worker::spawn(record.spec.clone(), ds.clone(), record.engine, self.config.db.clone()),
                None => worker::failed(format!("dataset {:?} is no longer served", record.spec.dataset)),
            };
            if let Some(n) = record.spec.run_id.strip_prefix("run-").and_then(|n| n.parse::<u64>().ok()) {
                runs.next = runs.next.max(n);
            }
            if let Some(key) = &record.spec.idempotency_key {
                runs.by_key.insert(key.clone(), record.spec.run_id.clone());
            }
            runs.by_id.insert(
                record.spec.run_id.clone(),
                Arc::new(RunEntry {
                    spec: record.spec,
                    handle,
                    lease: Mutex::new(None),
                }),
            );
        }
        Ok(())
    }

    fn run(&self, id: &str) -> Result<Arc<RunEntry>, ApiError> {
        self.runs
            .lock()
            .unwrap()
            .by_id
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown run {id:?}")))
    }
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message,
            field: None,
        }
    }

    fn bad_request(message: String, field: Option<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message,
            field,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.message, "field": self.field});
        (self.status, Json(body)).into_response()
    }
}

/// JSON body with the run's status and state version added to the body and
/// the headers.
fn run_response(code: StatusCode, snap: &Snapshot, mut body: Value) -> Response {
    if let Value::Object(map) = &mut body {
        map.insert("status".into(), json!(snap.status.as_str()));
        map.insert("state_version".into(), json!(snap.state_version));
    }
    let mut resp = (code, Json(body)).into_response();
    add_run_headers(resp.headers_mut(), snap);
    resp
}

fn add_run_headers(headers: &mut HeaderMap, snap: &Snapshot) {
    headers.insert("x-run-status", HeaderValue::from_static(snap.status.as_str()));
    headers.insert(
        "x-state-version",
        HeaderValue::from_str(&snap.state_version.to_string()).expect("digits are valid header text"),
    );
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/datasets", get(list_datasets))
        .route("/api/runs", post(create_run).get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/reviews", get(review_log))
        .route("/api/runs/{id}/reviews/next", get(next_review))
        .route("/api/runs/{id}/reviews/{request_id}", post(submit_review))
        .route("/api/runs/{id}/clusters", get(list_clusters))
        .route("/api/runs/{id}/clusters/{cluster_id}", get(cluster_detail))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Value> {
    let items: Vec<Value> = state
        .datasets
        .iter()
        .map(|(name, ds)| {
            json!({
                "name": name,
                "annotations": ds.dataset.annotations.len(),
                "cameras": ds.dataset.cameras.len(),
                "has_truth": ds.truth.is_some(),
            })
        })
        .collect();
    Json(json!({ "datasets": items }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRun {
    dataset: String,
    #[serde(default)]
    config: Option<Value>,
    #[serde(default)]
    mode: RunMode,
    #[serde(default)]
    idempotency_key: Option<String>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}"), None))
}

fn run_summary(spec: &RunSpec, snap: &Snapshot) -> Value {
    json!({
        "run_id": spec.run_id,
        "dataset": spec.dataset,
        "mode": spec.mode,
        "counters": snap.counters,
        "funnel": snap.context.as_ref().map(|c| &c.funnel),
        "pending_reviews": usize::from(snap.pending.is_some()),
        "error": snap.error,
    })
}

async fn create_run(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRun = parse_json(&body)?;
    let key = headers
        .get("idempotency-key")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(req.idempotency_key);

    let config: RunConfig = match req.config {
        None => RunConfig::default(),
        Some(v) => serde_json::from_value(v)
            .map_err(|e| ApiError::bad_request(format!("invalid config: {e}"), Some("config".into())))?,
    };
    config
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string(), e.field().map(str::to_string)))?;

    let mut runs = state.runs.lock().unwrap();
    if let Some(existing) = key.as_ref().and_then(|k| runs.by_key.get(k)) {
        let entry = runs.by_id[existing].clone();
        drop(runs);
        let snap = entry.snapshot();
        return Ok(run_response(StatusCode::OK, &snap, run_summary(&entry.spec, &snap)));
    }
    let served = state
        .datasets
        .get(&req.dataset)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown dataset {:?}", req.dataset)))?;
    if served.truth.is_none() {
        return Err(ApiError::bad_request(
            format!("dataset {:?} has no labels for the simulated verifier", req.dataset),
            Some("dataset".into()),
        ));
    }
    runs.next += 1;
    let spec = RunSpec {
        run_id: format!("run-{:04}", runs.next),
        dataset: req.dataset,
        mode: req.mode,
        config,
        idempotency_key: key.clone(),
    };
    let handle = worker::spawn(spec.clone(), served, None, state.config.db.clone());
    let entry = Arc::new(RunEntry {
        spec: spec.clone(),
        handle,
        lease: Mutex::new(None),
    });
    if let Some(k) = key {
        runs.by_key.insert(k, spec.run_id.clone());
    }
    runs.by_id.insert(spec.run_id.clone(), entry.clone());
    drop(runs);
    let snap = entry.snapshot();
    Ok(run_response(StatusCode::CREATED, &snap, run_summary(&spec, &snap)))
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Value> {
    let runs: Vec<Arc<RunEntry>> = state.runs.lock().unwrap().by_id.values().cloned().collect();
    let items: Vec<Value> = runs
        .iter()
        .map(|e| {
            let snap = e.snapshot();
            let mut v = run_summary(&e.spec, &snap);
            v["status"] = json!(snap.status.as_str());
            v["state_version"] = json!(snap.state_version);
            v
        })
        .collect();
    Json(json!({ "runs": items }))
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.run(&id)?;
    let snap = entry.snapshot();
    Ok(run_response(StatusCode::OK, &snap, run_summary(&entry.spec, &snap)))
}

async fn review_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.run(&id)?;
    let snap = entry.snapshot();
    Ok(run_response(StatusCode::OK, &snap, json!({ "run_id": id, "log": snap.log })))
}

fn annotation_card(snap: &Snapshot, id: &str) -> Value {
    let ann = snap.context.as_ref().and_then(|c| c.annotations.get(id));
    match ann {
        Some(a) => json!({
            "annotation_id": a.annotation_id,
            "kind": if a.crop_uri.is_some() { "image" } else { "metadata" },
            "crop_uri": a.crop_uri,
            "image_id": a.image_id,
            "camera_id": a.camera_id,
            "timestamp": census_core::ingest::format_timestamp(&a.timestamp),
            "viewpoint": a.viewpoint.as_str(),
            "species": a.species.as_str(),
            "ca_score": a.ca_score,
        }),
        None => json!({"annotation_id": id, "kind": "metadata", "crop_uri": null}),
    }
}

async fn next_review(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.run(&id)?;
    let snap = entry.snapshot();
    let empty = || {
        let mut resp = StatusCode::NO_CONTENT.into_response();
        add_run_headers(resp.headers_mut(), &snap);
        resp
    };
    let Some(req) = &snap.pending else {
        return Ok(empty());
    };
    let now = state.clock.now_ms();
    let mut lease = entry.lease.lock().unwrap();
    if let Some(l) = *lease {
        if l.request_id == req.request_id && l.expires_ms > now {
            return Ok(empty());
        }
    }
    let expires_ms = now + state.config.lease_ttl_ms;
    *lease = Some(Lease {
        request_id: req.request_id,
        expires_ms,
    });
    drop(lease);
    let body = json!({
        "run_id": id,
        "request": {
            "request_id": req.request_id,
            "pair": [req.pair.0, req.pair.1],
            "attempt": req.attempt,
            "cards": [annotation_card(&snap, &req.pair.0), annotation_card(&snap, &req.pair.1)],
        },
        "lease_expires_ms": expires_ms,
    });
    Ok(run_response(StatusCode::OK, &snap, body))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: String,
}

async fn submit_review(
    State(state): State<Arc<AppState>>,
    Path((id, request_id)): Path<(String, String)>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let entry = state.run(&id)?;
    let request_id: u64 = request_id
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown request {request_id:?}")))?;
    let decision_body: DecisionBody = parse_json(&body)?;
    let decision = Decision::parse(&decision_body.decision).ok_or_else(|| {
        ApiError::bad_request(
            format!("decision must be same, different or incomparable, got {:?}", decision_body.decision),
            Some("decision".into()),
        )
    })?;

    let (reply, rx) = oneshot::channel();
    let sent = entry.handle.commands.send(Command::Submit {
        request_id,
        outcome: ReviewOutcome::human(decision),
        reply,
    });
    let result = match sent {
        Ok(()) => rx.await.ok(),
        Err(_) => None,
    };
    let snap = entry.snapshot();
    let conflict = |message: String, recorded: Option<Decision>| {
        run_response(
            StatusCode::CONFLICT,
            &snap,
            json!({"error": message, "recorded": recorded.map(Decision::as_str)}),
        )
    };
    match result {
        None => Ok(conflict("run is not accepting reviews".into(), None)),
        Some(Ok(outcome)) => {
            if outcome == SubmitResult::Applied {
                let mut lease = entry.lease.lock().unwrap();
                if lease.is_some_and(|l| l.request_id == request_id) {
                    *lease = None;
                }
            }
            let result = match outcome {
                SubmitResult::Applied => "applied",
                SubmitResult::Duplicate => "duplicate",
            };
            Ok(run_response(
                StatusCode::OK,
                &snap,
                json!({"run_id": id, "request_id": request_id, "result": result, "log_length": snap.log.len()}),
            ))
        }
        Some(Err(LcaError::Conflict { recorded, .. })) => Ok(conflict(
            format!("request {request_id} was already answered"),
            Some(recorded),
        )),
        Some(Err(e @ LcaError::WrongSource { .. })) => Ok(conflict(e.to_string(), None)),
        Some(Err(e)) => Err(ApiError::not_found(e.to_string())),
    }
}

async fn list_clusters(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.run(&id)?;
    let snap = entry.snapshot();
    let clusters: Vec<Value> = snap
        .clustering
        .clusters()
        .into_iter()
        .map(|(cid, members)| json!({"cluster_id": cid, "size": members.len(), "members": members}))
        .collect();
    Ok(run_response(
        StatusCode::OK,
        &snap,
        json!({"run_id": id, "cluster_count": clusters.len(), "clusters": clusters}),
    ))
}

async fn cluster_detail(
    State(state): State<Arc<AppState>>,
    Path((id, cluster_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let entry = state.run(&id)?;
    let snap = entry.snapshot();
    let clusters = snap.clustering.clusters();
    let members = clusters
        .get(cluster_id.as_str())
        .ok_or_else(|| ApiError::not_found(format!("unknown cluster {cluster_id:?}")))?;
    let Some(ctx) = &snap.context else {
        return Err(ApiError::not_found(format!("unknown cluster {cluster_id:?}")));
    };
    let member_cards: Vec<Value> = members.iter().map(|m| annotation_card(&snap, m)).collect();
    let by_cluster = encounters_by_cluster(&snap.clustering, &ctx.encounters);
    let encounters = by_cluster.get(cluster_id.as_str()).cloned().unwrap_or_default();
    let encounter_items: Vec<Value> = encounters
        .iter()
        .map(|e| {
            json!({
                "encounter_id": e.encounter_id,
                "camera_id": e.camera_id,
                "start_epoch_s": e.start_epoch_s,
                "members": e.member_ids,
                "representative_id": e.representative_id,
            })
        })
        .collect();
    let cameras: BTreeSet<&str> = encounters.iter().map(|e| e.camera_id.as_str()).collect();
    let timestamps: Vec<String> = members
        .iter()
        .filter_map(|m| ctx.annotations.get(*m))
        .map(|a| census_core::ingest::format_timestamp(&a.timestamp))
        .collect();
    let filter: BTreeSet<String> = [cluster_id.clone()].into_iter().collect();
    let geojson = export_geojson(&snap.clustering, &ctx.encounters, &ctx.cameras, Some(&filter));
    Ok(run_response(
        StatusCode::OK,
        &snap,
        json!({
            "run_id": id,
            "cluster_id": cluster_id,
            "members": member_cards,
            "encounters": encounter_items,
            "cameras": cameras,
            "timestamps": timestamps,
            "geojson": geojson,
        }),
    ))
}
