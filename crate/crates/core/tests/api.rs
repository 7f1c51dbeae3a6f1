use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hypermod::config::AppConfig;
use hypermod::fixtures::fixture_config;
use hypermod::pipeline::Community;
use hypermod::service::{router, AppState};
use hypermod::store::Store;
use serde_json::{json, Value};
use tower::ServiceExt;

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

struct Api {
    app: Router,
    state: Arc<AppState>,
    token: Option<&'static str>,
    _dir: Option<tempfile::TempDir>,
}

impl Api {
    fn in_memory(token: Option<&'static str>) -> Self {
        let config = AppConfig { community: fixture_config(), ..AppConfig::default() };
        let state = AppState::new(Community::in_memory(&config.community).unwrap(), config, token.map(String::from));
        Api { app: router(state.clone()), state, token, _dir: None }
    }

    fn on_disk() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = AppConfig { store_dir: dir.path().join("store"), community: fixture_config(), ..AppConfig::default() };
        let community = Community::open(&config.store_dir, &config.community).unwrap();
        let state = AppState::new(community, config, None);
        Api { app: router(state.clone()), state, token: None, _dir: Some(dir) }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        if let Some(k) = key {
            req = req.header("idempotency-key", k);
        }
        let body = match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None, None).await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", uri, Some(body), None).await
    }

    async fn seeded(self) -> Self {
        assert_eq!(self.post("/api/ingest", json!({ "path": SAMPLE })).await.0, StatusCode::OK);
        for task in ["intent", "moderation", "contribution", "sentiment"] {
            let (s, body) = self.post("/api/classify/run", json!({ "task": task })).await;
            assert_eq!(s, StatusCode::OK, "{body}");
        }
        self
    }

    async fn first_pending_flag(&self) -> String {
        let (_, page) = self.get("/api/flags?state=pending&limit=1").await;
        page["items"][0]["flag_id"].as_str().unwrap().to_string()
    }
}

fn assert_api_error(body: &Value, code: &str) {
    let obj = body.as_object().unwrap_or_else(|| panic!("not an ApiError: {body}"));
    assert_eq!(obj.len(), 2, "{body}");
    assert_eq!(obj["code"], code, "{body}");
    assert!(obj["message"].is_string());
}

fn decision(verdict: &str) -> Value {
    json!({ "verdict": verdict, "moderator_id": "mod-1" })
}

#[tokio::test]
async fn empty_store_lists_nothing() {
    let api = Api::in_memory(None);
    let (s, body) = api.get("/api/flags").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, json!({ "items": [], "next": null }));
    let (s, body) = api.get("/api/personas").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["report"]["active_users"], 0);
    assert_eq!(api.get("/api/sentiment").await.1, json!([]));
    assert_api_error(&api.get("/api/metrics/intent").await.1, "not_found");
}

#[tokio::test]
async fn flags_come_with_text_and_context() {
    let api = Api::in_memory(None).seeded().await;
    let (_, page) = api.get("/api/flags?state=pending&limit=5").await;
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 5);
    for f in items {
        assert!(f["text"].is_string());
        assert!(f["context"].as_array().unwrap().len() <= 2);
        assert_eq!(f["state"], "pending");
    }
}

#[tokio::test]
async fn second_decision_conflicts() {
    let api = Api::in_memory(None).seeded().await;
    let id = api.first_pending_flag().await;
    let uri = format!("/api/flags/{id}/decision");
    let (s, first) = api.post(&uri, decision("upheld")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(first["state"], "upheld");
    let (s, body) = api.post(&uri, decision("overturned")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_api_error(&body, "conflict");
}

#[tokio::test]
async fn idempotency_key_replays_the_stored_decision() {
    let api = Api::in_memory(None).seeded().await;
    let id = api.first_pending_flag().await;
    let uri = format!("/api/flags/{id}/decision");
    let a = api.call("POST", &uri, Some(decision("overturned")), Some("k-1")).await;
    let b = api.call("POST", &uri, Some(decision("overturned")), Some("k-1")).await;
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
    let other = api.first_pending_flag().await;
    let (s, body) = api.call("POST", &format!("/api/flags/{other}/decision"), Some(decision("upheld")), Some("k-1")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_api_error(&body, "conflict");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_decisions_yield_exactly_one_conflict() {
    let api = Arc::new(Api::in_memory(None).seeded().await);
    for round in 0..5 {
        let id = api.first_pending_flag().await;
        let uri = format!("/api/flags/{id}/decision");
        let verdicts = ["upheld", "overturned"];
        let handles: Vec<_> = verdicts
            .iter()
            .map(|v| {
                let (api, uri, body) = (api.clone(), uri.clone(), decision(v));
                tokio::spawn(async move { api.post(&uri, body).await.0 })
            })
            .collect();
        let mut statuses = Vec::new();
        for h in handles {
            statuses.push(h.await.unwrap());
        }
        statuses.sort();
        assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT], "round {round}");
    }
}

#[tokio::test]
async fn unknown_flag_and_bad_bodies() {
    let api = Api::in_memory(None).seeded().await;
    let (s, body) = api.post("/api/flags/flag-999999/decision", decision("upheld")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&body, "not_found");
    let id = api.first_pending_flag().await;
    let (s, body) = api.post(&format!("/api/flags/{id}/decision"), json!({ "verdict": "maybe" })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");
    let (s, body) = api.post(&format!("/api/flags/{id}/decision"), json!({ "verdict": "upheld", "moderator_id": " " })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");
    let (s, body) = api.get("/api/flags?state=sideways").await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");
}

#[tokio::test]
async fn weights_are_validated_and_persisted() {
    let api = Api::in_memory(None);
    let (_, cfg) = api.get("/api/config/weights").await;
    let mut weights = cfg["weights"].clone();
    assert_eq!(weights["content"], 3.0);

    weights["content"] = json!(-1.0);
    let (s, body) = api.call("PUT", "/api/config/weights", Some(json!({ "weights": weights })), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");

    weights["content"] = json!(5.0);
    weights["na"] = json!(1.0);
    let (s, _) = api.call("PUT", "/api/config/weights", Some(json!({ "weights": weights })), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    weights["na"] = json!(0.0);
    let (s, body) = api.call("PUT", "/api/config/weights", Some(json!({ "weights": weights })), None).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(api.get("/api/config/weights").await.1["weights"]["content"], 5.0);
}

#[tokio::test]
async fn cost_endpoints() {
    let api = Api::in_memory(None);
    let (s, r) = api.get("/api/cost/paper").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["baseline_daily"], 6000.0);
    assert!((r["system_daily"].as_f64().unwrap() - 66.10).abs() < 0.005);
    assert!(r["overhead_note"].as_str().unwrap().contains("20.00"));
    assert_api_error(&api.get("/api/cost/other").await.1, "not_found");

    let scenario = json!({
        "moderators": 10.0, "hours_per_day": 8.0, "hourly_rate": 25.0, "fte_fraction": 1.0,
        "wallets_baseline": 1000.0, "api_daily": 1.0, "dev_total": 365.0, "amortization_days": 365.0,
        "wallets_target": 2000.0
    });
    let (s, r) = api.post("/api/cost", json!({ "scenario": scenario })).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["baseline_daily"], 2000.0);
    assert_eq!(r["system_daily"], 2.0);
}

#[tokio::test]
async fn agreement_endpoint() {
    let api = Api::in_memory(None);
    let grid = json!([["a", "a"], ["a", "b"], ["b", "b"], ["b", "b"]]);
    let (s, r) = api.post("/api/agreement", json!({ "grid": grid })).await;
    assert_eq!(s, StatusCode::OK);
    assert!((r["alpha"].as_f64().unwrap() - 8.0 / 15.0).abs() < 1e-12);
    let (s, body) = api.post("/api/agreement", json!({ "grid": [["a"], ["a"]] })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");
}

#[tokio::test]
async fn bearer_token_guards_mutations() {
    let mut api = Api::in_memory(Some("t0ken"));
    assert_eq!(api.post("/api/ingest", json!({ "path": SAMPLE })).await.0, StatusCode::OK);
    api.token = None;
    let (s, body) = api.post("/api/classify/run", json!({ "task": "intent" })).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_api_error(&body, "validation");
    api.token = Some("wrong");
    assert_eq!(api.post("/api/classify/run", json!({ "task": "intent" })).await.0, StatusCode::UNAUTHORIZED);
    api.token = Some("t0ken");
    assert_eq!(api.post("/api/classify/run", json!({ "task": "intent" })).await.0, StatusCode::OK);
}

#[tokio::test]
async fn every_error_body_is_an_api_error() {
    let api = Api::in_memory(None);
    let (s, body) = api.get("/api/no/such/thing").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&body, "not_found");
    let (s, body) = api.call("DELETE", "/api/flags", None, None).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
    assert_api_error(&body, "validation");
    let (s, body) = api.call("POST", "/api/ingest", None, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");
    let (s, body) = api.post("/api/ingest", json!({ "path": "/definitely/missing.jsonl" })).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert_api_error(&body, "internal");
    let (s, body) = api.post("/api/classify/run", json!({ "task": "intent", "backend": "remote" })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&body, "validation");
}

#[tokio::test]
async fn cursor_pages_are_stable_under_appends() {
    let api = Api::in_memory(None).seeded().await;
    let mut seen = Vec::new();
    let mut cursor: Option<u64> = None;
    let mut appended = false;
    loop {
        let uri = match cursor {
            Some(c) => format!("/api/flags?limit=10&cursor={c}"),
            None => "/api/flags?limit=10".to_string(),
        };
        let (_, page) = api.get(&uri).await;
        for f in page["items"].as_array().unwrap() {
            seen.push(f["flag_id"].as_str().unwrap().to_string());
        }
        if !appended {
            // New audit flags land at the end of the sequence.
            assert_eq!(api.post("/api/audit", json!({ "sample_size": 3, "seed": 1 })).await.0, StatusCode::OK);
            appended = true;
        }
        match page["next"].as_u64() {
            Some(n) => cursor = Some(n),
            None => break,
        }
    }
    let total = api.state.community().state().moderation.flags().len();
    let mut unique = seen.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), seen.len(), "a flag appeared twice");
    assert_eq!(seen.len(), total);
}

#[tokio::test]
async fn curation_round_trip_reaches_the_retraining_export() {
    let api = Api::on_disk().seeded().await;
    let before = api.post("/api/export/retraining", json!({ "task": "moderation" })).await.1["examples"].as_u64().unwrap();
    for verdict in ["upheld", "overturned", "upheld"] {
        let id = api.first_pending_flag().await;
        assert_eq!(api.post(&format!("/api/flags/{id}/decision"), decision(verdict)).await.0, StatusCode::OK);
    }
    let (s, export) = api.post("/api/export/retraining", json!({ "task": "moderation" })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(export["examples"].as_u64().unwrap(), before + 3);
    let written = std::fs::read_to_string(export["path"].as_str().unwrap()).unwrap();
    assert_eq!(written.lines().count() as u64, before + 3);
}

#[tokio::test]
async fn evaluate_then_metrics() {
    let api = Api::in_memory(None);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/intent_test.jsonl");
    let (s, report) = api.post("/api/evaluate", json!({ "task": "intent", "test_split_path": path })).await;
    assert_eq!(s, StatusCode::OK, "{report}");
    assert_eq!(report["n"], 116);
    let (s, metrics) = api.get("/api/metrics/intent").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(metrics, report);
    let (s, body) = api.post("/api/evaluate", json!({ "task": "sentiment" })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "no sentiment test examples in the store");
    assert_api_error(&body, "validation");
}

#[tokio::test]
async fn rewards_and_leaderboard() {
    let api = Api::in_memory(None).seeded().await;
    let (_, rewards) = api.get("/api/rewards?state=pending").await;
    let id = rewards[0]["reward_id"].as_str().unwrap().to_string();
    let uri = format!("/api/rewards/{id}/decision");
    let (s, r) = api.post(&uri, json!({ "verdict": "approved", "moderator_id": "mod-1" })).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["state"], "approved");
    assert_eq!(api.post(&uri, json!({ "verdict": "rejected", "moderator_id": "mod-1" })).await.0, StatusCode::CONFLICT);
    let (_, board) = api.get("/api/contributions/leaderboard?limit=3").await;
    assert_eq!(board.as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn sentiment_matches_the_library() {
    let api = Api::in_memory(None).seeded().await;
    let (_, series) = api.get("/api/sentiment?window=daily&channel=fan-zone").await;
    let expected = api.state.community().sentiment(Some("fan-zone"), None, None, hypermod::sentiment::parse_window("daily").unwrap()).unwrap();
    assert_eq!(series, serde_json::to_value(expected).unwrap());
    assert!(!series.as_array().unwrap().is_empty());
}

#[tokio::test]
async fn an_api_session_is_replayable() {
    let api = Api::on_disk().seeded().await;
    let id = api.first_pending_flag().await;
    api.post(&format!("/api/flags/{id}/decision"), decision("overturned")).await;
    api.post("/api/audit", json!({ "sample_size": 4, "seed": 9 })).await;
    let dir = api.state.community().store().dir().unwrap().to_path_buf();
    let live = api.state.community().state().clone();
    assert_eq!(Store::replay(&dir).unwrap(), live);
}
