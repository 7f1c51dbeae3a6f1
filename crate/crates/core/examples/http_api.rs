//! Drives the HTTP API in-process: ingest, classify, list flags, decide one
//! twice and submit an invalid weight map. `hypermod serve` exposes the same
//! router on a TCP port.

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use hypermod::config::AppConfig;
use hypermod::fixtures::fixture_config;
use hypermod::pipeline::Community;
use hypermod::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl");

pub fn run() -> hypermod::Result<Vec<(String, StatusCode, Value)>> {
    let config = AppConfig { community: fixture_config(), ..AppConfig::default() };
    let app = router(AppState::new(Community::in_memory(&config.community)?, config, None));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let mut log = Vec::new();
        let call = |method: Method, uri: String, body: Option<Value>| {
            let app = app.clone();
            async move {
                let mut req = Request::builder().method(method.clone()).uri(&uri);
                if body.is_some() {
                    req = req.header("content-type", "application/json").header("idempotency-key", "demo-1");
                }
                let body = body.map_or(Body::empty(), |b| Body::from(b.to_string()));
                let resp = app.oneshot(req.body(body).unwrap()).await.unwrap();
                let status = resp.status();
                let bytes = resp.into_body().collect().await.unwrap().to_bytes();
                let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
                (format!("{method} {uri}"), status, value)
            }
        };
        log.push(call(Method::POST, "/api/ingest".into(), Some(json!({ "path": SAMPLE }))).await);
        log.push(call(Method::POST, "/api/classify/run".into(), Some(json!({ "task": "moderation" }))).await);
        let flags = call(Method::GET, "/api/flags?state=pending&limit=3".into(), None).await;
        let first = flags.2["items"][0]["flag_id"].as_str().map(str::to_string);
        log.push(flags);
        if let Some(id) = first {
            let decision = json!({ "verdict": "upheld", "moderator_id": "mod-ana" });
            log.push(call(Method::POST, format!("/api/flags/{id}/decision"), Some(decision.clone())).await);
            // Same idempotency key: the stored decision is returned again.
            log.push(call(Method::POST, format!("/api/flags/{id}/decision"), Some(decision)).await);
        }
        log.push(call(Method::PUT, "/api/config/weights".into(), Some(json!({ "weights": { "na": 0.0, "onboarding": -1.0 } }))).await);
        log.push(call(Method::GET, "/api/cost/paper".into(), None).await);
        log.push(call(Method::GET, "/api/nowhere".into(), None).await);
        Ok(log)
    })
}

fn main() -> hypermod::Result<()> {
    for (what, status, body) in run()? {
        let mut text = body.to_string();
        if text.len() > 160 {
            text.truncate(157);
            text.push_str("...");
        }
        println!("{what}\n  -> {status} {text}");
    }
    Ok(())
}
