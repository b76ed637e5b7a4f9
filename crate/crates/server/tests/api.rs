use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use census_core::lca::{run_lca, LcaConfig};
use census_core::matchers::{SimHuman, SimOracleConfig, SimOracleModel};
use census_core::pipeline::{run_funnel, FilterConfig};
use census_core::sim::{generate, SimConfig};
use census_server::clock::ManualClock;
use census_server::worker::ServedDataset;
use census_server::{router, AppState, ServerConfig, DEFAULT_LEASE_TTL_MS};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn served(seed: u64) -> ServedDataset {
    let sim = generate(&SimConfig {
        seed,
        individuals: 10,
        cameras: 5,
        study_days: 6,
        ..SimConfig::default()
    })
    .unwrap();
    ServedDataset {
        dataset: sim.dataset,
        truth: Some(sim.truth),
    }
}

fn app_with(clock: ManualClock, config: ServerConfig) -> Router {
    let mut datasets = BTreeMap::new();
    datasets.insert("sim".to_string(), served(3));
    let mut unlabeled = served(4);
    unlabeled.truth = None;
    datasets.insert("unlabeled".to_string(), unlabeled);
    router(AppState::new(datasets, Arc::new(clock), config).unwrap())
}

fn app() -> (Router, ManualClock) {
    let clock = ManualClock::new(1_000);
    (app_with(clock.clone(), ServerConfig::default()), clock)
}

struct Reply {
    status: StatusCode,
    run_status: Option<String>,
    version: Option<u64>,
    body: Value,
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let header = |name: &str| resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
    let run_status = header("x-run-status");
    let version = header("x-state-version").and_then(|v| v.parse().ok());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    Reply {
        status,
        run_status,
        version,
        body,
    }
}

/// Settings under which the verifier is noisy enough that human reviews
/// are needed.
fn noisy_config() -> Value {
    json!({
        "oracle": {"seed": 3, "verifier_flip": 0.3, "human_error": 0.0, "human_incomparable": 0.0},
        "lca": {"seed": 3, "max_algo_reviews_per_pair": 1},
    })
}

async fn wait_settled(app: &Router, run: &str) -> Reply {
    for _ in 0..2_000 {
        let r = call(app, "GET", &format!("/api/runs/{run}"), None, None).await;
        if matches!(r.body["status"].as_str(), Some("awaiting_reviews" | "converged" | "failed")) {
            return r;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("run {run} did not settle");
}

async fn start(app: &Router, body: Value) -> String {
    let r = call(app, "POST", "/api/runs", Some(body), None).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.body);
    r.body["run_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn creating_a_run_is_idempotent_per_key() {
    let (app, _) = app();
    let body = json!({"dataset": "sim", "mode": "sim"});
    let first = call(&app, "POST", "/api/runs", Some(body.clone()), Some("k1")).await;
    assert_eq!(first.status, StatusCode::CREATED);
    let again = call(&app, "POST", "/api/runs", Some(body.clone()), Some("k1")).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.body["run_id"], first.body["run_id"]);
    let other = call(&app, "POST", "/api/runs", Some(body), Some("k2")).await;
    assert_eq!(other.status, StatusCode::CREATED);
    assert_ne!(other.body["run_id"], first.body["run_id"]);
    let listed = call(&app, "GET", "/api/runs", None, None).await;
    assert_eq!(listed.body["runs"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn run_creation_errors() {
    let (app, _) = app();
    let r = call(&app, "POST", "/api/runs", Some(json!({"dataset": "nope"})), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let bad = json!({"dataset": "sim", "config": {"filter": {"ca_threshold": 1.5}}});
    let r = call(&app, "POST", "/api/runs", Some(bad), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["field"], "filter.ca_threshold");

    let r = call(&app, "POST", "/api/runs", Some(json!({"dataset": "sim", "config": {"lca": {"bogus": 1}}})), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = call(&app, "POST", "/api/runs", Some(json!({"dataset": "unlabeled"})), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["field"], "dataset");

    let r = call(&app, "GET", "/api/runs/run-9999", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = call(&app, "GET", "/api/runs/run-9999/reviews/next", None, None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn simulated_run_matches_the_engine() {
    let (app, _) = app();
    let run = start(&app, json!({"dataset": "sim", "mode": "sim"})).await;
    let settled = wait_settled(&app, &run).await;
    assert_eq!(settled.body["status"], "converged");

    let ds = served(3);
    let funnel = run_funnel(&ds.dataset, &FilterConfig::default());
    let truth: BTreeMap<String, String> = funnel
        .report
        .final_ids
        .iter()
        .map(|id| (id.clone(), ds.truth.as_ref().unwrap()[id].clone()))
        .collect();
    let model = Arc::new(SimOracleModel::new(truth, SimOracleConfig::default()));
    let mut human = SimHuman::new(model.clone());
    let (_, result) = run_lca(
        funnel.report.final_ids.clone(),
        model.as_ref(),
        model.as_ref(),
        &mut human,
        LcaConfig::default(),
    )
    .unwrap();

    assert_eq!(settled.body["counters"]["cluster_count"], json!(result.cluster_count));
    assert_eq!(settled.body["counters"]["total_reviews"], json!(result.total_reviews));
    let clusters = call(&app, "GET", &format!("/api/runs/{run}/clusters"), None, None).await;
    assert_eq!(clusters.body["cluster_count"], json!(result.cluster_count));
    for c in clusters.body["clusters"].as_array().unwrap() {
        let cid = c["cluster_id"].as_str().unwrap();
        for m in c["members"].as_array().unwrap() {
            assert_eq!(result.clustering.cluster_of(m.as_str().unwrap()), Some(cid));
        }
    }

    let log = call(&app, "GET", &format!("/api/runs/{run}/reviews"), None, None).await;
    assert_eq!(log.body["log"].as_array().unwrap().len(), result.total_reviews);

    let next = call(&app, "GET", &format!("/api/runs/{run}/reviews/next"), None, None).await;
    assert_eq!(next.status, StatusCode::NO_CONTENT);
    assert_eq!(next.run_status.as_deref(), Some("converged"));
}

#[tokio::test]
async fn cluster_detail_lists_one_feature_per_encounter() {
    let (app, _) = app();
    let run = start(&app, json!({"dataset": "sim", "mode": "sim"})).await;
    wait_settled(&app, &run).await;
    let ds = served(3);
    let funnel = run_funnel(&ds.dataset, &FilterConfig::default());
    let clusters = call(&app, "GET", &format!("/api/runs/{run}/clusters"), None, None).await;
    for c in clusters.body["clusters"].as_array().unwrap() {
        let cid = c["cluster_id"].as_str().unwrap();
        let members: BTreeSet<&str> = c["members"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
        let expected = funnel
            .encounters
            .iter()
            .filter(|e| members.contains(e.representative_id.as_str()))
            .count();
        let detail = call(&app, "GET", &format!("/api/runs/{run}/clusters/{cid}"), None, None).await;
        assert_eq!(detail.status, StatusCode::OK);
        assert_eq!(detail.body["encounters"].as_array().unwrap().len(), expected);
        assert_eq!(detail.body["geojson"]["features"].as_array().unwrap().len(), expected);
        assert_eq!(detail.body["members"].as_array().unwrap().len(), members.len());
    }
    let missing = call(&app, "GET", &format!("/api/runs/{run}/clusters/nope"), None, None).await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn review_queue_contract() {
    let (app, clock) = app();
    let run = start(&app, json!({"dataset": "sim", "config": noisy_config()})).await;
    let settled = wait_settled(&app, &run).await;
    assert_eq!(settled.body["status"], "awaiting_reviews", "{}", settled.body);
    let next_uri = format!("/api/runs/{run}/reviews/next");

    let first = call(&app, "GET", &next_uri, None, None).await;
    assert_eq!(first.status, StatusCode::OK);
    let req = first.body["request"].clone();
    let id = req["request_id"].as_u64().unwrap();
    assert_eq!(req["cards"].as_array().unwrap().len(), 2);
    assert_eq!(req["cards"][0]["kind"], "metadata");

    let second = call(&app, "GET", &next_uri, None, None).await;
    assert_eq!(second.status, StatusCode::NO_CONTENT);

    clock.advance(DEFAULT_LEASE_TTL_MS + 1);
    let redelivered = call(&app, "GET", &next_uri, None, None).await;
    assert_eq!(redelivered.status, StatusCode::OK);
    assert_eq!(redelivered.body["request"]["request_id"].as_u64(), Some(id));

    let submit_uri = format!("/api/runs/{run}/reviews/{id}");
    let bad = call(&app, "POST", &submit_uri, Some(json!({"decision": "maybe"})), None).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.body["field"], "decision");

    let log_uri = format!("/api/runs/{run}/reviews");
    let before = call(&app, "GET", &log_uri, None, None).await;
    let before_len = before.body["log"].as_array().unwrap().len();

    let ok = call(&app, "POST", &submit_uri, Some(json!({"decision": "same"})), None).await;
    assert_eq!(ok.status, StatusCode::OK, "{}", ok.body);
    assert_eq!(ok.body["result"], "applied");
    assert!(ok.version.unwrap() > settled.version.unwrap());
    let after = call(&app, "GET", &log_uri, None, None).await;
    let log = after.body["log"].as_array().unwrap();
    assert!(log.len() > before_len);
    let entries: Vec<&Value> = log.iter().filter(|e| e["request_id"].as_u64() == Some(id)).collect();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0]["source"], "human");
    assert_eq!(log[before_len]["request_id"].as_u64(), Some(id));

    let repeat = call(&app, "POST", &submit_uri, Some(json!({"decision": "same"})), None).await;
    assert_eq!(repeat.status, StatusCode::OK);
    assert_eq!(repeat.body["result"], "duplicate");
    let again = call(&app, "GET", &log_uri, None, None).await;
    assert_eq!(again.body["log"], after.body["log"]);

    let conflict = call(&app, "POST", &submit_uri, Some(json!({"decision": "different"})), None).await;
    assert_eq!(conflict.status, StatusCode::CONFLICT);
    assert_eq!(conflict.body["recorded"], "same");

    let unknown = call(&app, "POST", &format!("/api/runs/{run}/reviews/999999"), Some(json!({"decision": "same"})), None).await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
}

/// Answering every request with the true label through the API reproduces
/// the simulated-human run with a perfect reviewer.
#[tokio::test]
async fn api_reviews_reproduce_the_simulated_run() {
    let (app, _) = app();
    let truth = served(3).truth.unwrap();
    let interactive = start(&app, json!({"dataset": "sim", "config": noisy_config()})).await;
    let simulated = start(&app, json!({"dataset": "sim", "mode": "sim", "config": noisy_config()})).await;

    let mut answered = 0;
    loop {
        let state = wait_settled(&app, &interactive).await;
        if state.body["status"] != "awaiting_reviews" {
            assert_eq!(state.body["status"], "converged");
            break;
        }
        let next = call(&app, "GET", &format!("/api/runs/{interactive}/reviews/next"), None, None).await;
        assert_eq!(next.status, StatusCode::OK);
        let req = &next.body["request"];
        let (a, b) = (req["pair"][0].as_str().unwrap(), req["pair"][1].as_str().unwrap());
        let decision = if truth[a] == truth[b] { "same" } else { "different" };
        let uri = format!("/api/runs/{interactive}/reviews/{}", req["request_id"]);
        // A double click must not produce a second log entry.
        for _ in 0..2 {
            let r = call(&app, "POST", &uri, Some(json!({"decision": decision})), None).await;
            assert_eq!(r.status, StatusCode::OK);
        }
        answered += 1;
    }
    assert!(answered > 0);
    wait_settled(&app, &simulated).await;

    let a = call(&app, "GET", &format!("/api/runs/{interactive}/clusters"), None, None).await;
    let b = call(&app, "GET", &format!("/api/runs/{simulated}/clusters"), None, None).await;
    assert_eq!(a.body["clusters"], b.body["clusters"]);
    let la = call(&app, "GET", &format!("/api/runs/{interactive}/reviews"), None, None).await;
    let lb = call(&app, "GET", &format!("/api/runs/{simulated}/reviews"), None, None).await;
    let strip = |v: &Value| -> Vec<(Value, Value)> {
        v["log"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| (e["pair"].clone(), e["decision"].clone()))
            .collect()
    };
    assert_eq!(strip(&la.body), strip(&lb.body));
    let humans = la.body["log"].as_array().unwrap().iter().filter(|e| e["source"] == "human").count();
    assert_eq!(humans, answered);
}

#[tokio::test]
async fn runs_resume_from_the_database() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig {
        db: Some(dir.path().to_path_buf()),
        ..ServerConfig::default()
    };
    let clock = ManualClock::new(0);
    let app = app_with(clock.clone(), config.clone());
    let run = start(&app, json!({"dataset": "sim", "config": noisy_config(), "idempotency_key": "persist"})).await;
    wait_settled(&app, &run).await;
    let next = call(&app, "GET", &format!("/api/runs/{run}/reviews/next"), None, None).await;
    let id = next.body["request"]["request_id"].as_u64().unwrap();
    let ok = call(&app, "POST", &format!("/api/runs/{run}/reviews/{id}"), Some(json!({"decision": "different"})), None).await;
    assert_eq!(ok.status, StatusCode::OK);
    let settled = wait_settled(&app, &run).await;
    let log = call(&app, "GET", &format!("/api/runs/{run}/reviews"), None, None).await;
    drop(app);

    let restarted = app_with(clock, config);
    let resumed = wait_settled(&restarted, &run).await;
    assert_eq!(resumed.body["status"], settled.body["status"]);
    assert_eq!(resumed.body["counters"], settled.body["counters"]);
    let log2 = call(&restarted, "GET", &format!("/api/runs/{run}/reviews"), None, None).await;
    assert_eq!(log2.body["log"], log.body["log"]);
    let dup = call(&restarted, "POST", "/api/runs", Some(json!({"dataset": "sim"})), Some("persist")).await;
    assert_eq!(dup.status, StatusCode::OK);
    assert_eq!(dup.body["run_id"].as_str(), Some(run.as_str()));
    let fresh = start(&restarted, json!({"dataset": "sim", "mode": "sim"})).await;
    assert_ne!(fresh, run);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_fetches_share_one_lease() {
    let (app, _) = app();
    let run = start(&app, json!({"dataset": "sim", "config": noisy_config()})).await;
    wait_settled(&app, &run).await;
    let uri = format!("/api/runs/{run}/reviews/next");
    let (a, b) = tokio::join!(call(&app, "GET", &uri, None, None), call(&app, "GET", &uri, None, None));
    let mut codes = [a.status, b.status];
    codes.sort();
    assert_eq!(codes, [StatusCode::OK, StatusCode::NO_CONTENT]);
}
