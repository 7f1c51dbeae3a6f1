use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hypermod::domain::TaskKind;
use hypermod::error::Error;
use hypermod::fixtures::{fixture_config, texts_for};
use hypermod::gateway::{
    AbstainReason, BackendResponse, BatchOptions, BatchStatus, Capabilities, ClassifierBackend, ClassifyRequest, Gateway,
    Outcome, RemoteBackend, RemoteConfig, RetryPolicy, StubBackend, TransportError,
};
use hypermod::pipeline::Community;
use parking_lot::Mutex;
use proptest::prelude::*;

fn request(id: usize, task: TaskKind, text: &str) -> ClassifyRequest {
    ClassifyRequest { message_id: format!("m{id}"), task, text: text.to_string(), context: vec!["earlier".into()] }
}

fn strip_time(o: Outcome) -> Outcome {
    match o {
        Outcome::Classified(mut c) => {
            c.created_at = chrono::DateTime::UNIX_EPOCH;
            Outcome::Classified(c)
        }
        a => a,
    }
}

fn task_strategy() -> impl Strategy<Value = TaskKind> {
    prop::sample::select(TaskKind::ALL.to_vec())
}

fn text_strategy() -> impl Strategy<Value = String> {
    let pooled = (task_strategy(), 0..8usize, 0..40usize).prop_map(|(t, l, i)| {
        let labels = t.labels();
        let pool = texts_for(t, labels[l % labels.len()]);
        pool[i % pool.len()].to_string()
    });
    prop_oneof![pooled, "[a-z !?.]{1,60}".prop_filter("non-blank", |s| !s.trim().is_empty())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cached_results_equal_fresh_stub_calls(task in task_strategy(), texts in prop::collection::vec(text_strategy(), 1..20)) {
        let warm = Gateway::stub();
        for (i, t) in texts.iter().enumerate() {
            warm.classify(&request(i, task, t)).unwrap();
        }
        for (i, t) in texts.iter().enumerate() {
            let cached = warm.classify(&request(i, task, t)).unwrap();
            prop_assert!(cached.cache_hit);
            let fresh = Gateway::stub().classify(&request(i, task, t)).unwrap();
            prop_assert!(!fresh.cache_hit);
            prop_assert_eq!(strip_time(cached.outcome), strip_time(fresh.outcome));
        }
    }

    #[test]
    fn outputs_stay_inside_the_label_set(task in task_strategy(), text in text_strategy()) {
        let res = Gateway::stub().classify(&request(0, task, &text)).unwrap();
        match res.outcome {
            Outcome::Classified(c) => {
                prop_assert!(task.contains(&c.label));
                c.validate().unwrap();
            }
            Outcome::Abstain(a) => prop_assert_eq!(a.reason, AbstainReason::Parse),
        }
    }

    #[test]
    fn stub_is_a_pure_function(task in task_strategy(), text in text_strategy()) {
        let stub = StubBackend::builtin();
        let req = request(0, task, &text);
        prop_assert_eq!(stub.complete(&req, "a").unwrap(), stub.complete(&req, "b").unwrap());
    }
}

/// Records call times; fails the first `fail_first` calls for each message
/// and every call once `calls >= fail_after`.
struct Scripted {
    reply: String,
    fail_first: usize,
    fail_after: usize,
    calls: Mutex<Vec<Instant>>,
    per_message: Mutex<std::collections::HashMap<String, usize>>,
}

impl Scripted {
    fn new(reply: &str) -> Self {
        Scripted {
            reply: reply.into(),
            fail_first: 0,
            fail_after: usize::MAX,
            calls: Mutex::new(Vec::new()),
            per_message: Mutex::new(Default::default()),
        }
    }
}

impl ClassifierBackend for Scripted {
    fn backend_id(&self) -> &str {
        "scripted"
    }
    fn model_version(&self) -> &str {
        "scripted-v1"
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { returns_scores: false }
    }
    fn complete(&self, request: &ClassifyRequest, _prompt: &str) -> Result<BackendResponse, TransportError> {
        let n = {
            let mut calls = self.calls.lock();
            calls.push(Instant::now());
            calls.len()
        };
        let attempt = {
            let mut m = self.per_message.lock();
            let a = m.entry(request.message_id.clone()).or_insert(0);
            *a += 1;
            *a
        };
        if n > self.fail_after || attempt <= self.fail_first {
            return Err(TransportError("connection refused".into()));
        }
        Ok(BackendResponse { raw: self.reply.clone(), scores: None, total_tokens: Some(7) })
    }
}

fn quick_retry(attempts: u32) -> RetryPolicy {
    RetryPolicy { attempts, initial_backoff: Duration::from_millis(2) }
}

#[test]
fn rate_limit_holds_in_every_sliding_second() {
    let backend = Arc::new(Scripted::new("casual"));
    let gateway = Gateway::new(backend.clone());
    let requests: Vec<_> = (0..45).map(|i| request(i, TaskKind::Intent, &format!("distinct text {i}"))).collect();
    let opts = BatchOptions { parallelism: 8, rate_limit: Some(20.0), ..BatchOptions::default() };
    let run = gateway.run_batch(TaskKind::Intent, &requests, &opts).unwrap();
    assert_eq!(run.summary.classified, 45);
    let calls = backend.calls.lock().clone();
    for (i, start) in calls.iter().enumerate() {
        let in_window = calls[i..].iter().filter(|t| t.duration_since(*start) < Duration::from_secs(1)).count();
        assert!(in_window <= 20, "{in_window} calls within one second");
    }
}

#[test]
fn transient_failures_are_retried() {
    let mut scripted = Scripted::new(" Crypto.\n");
    scripted.fail_first = 2;
    let backend = Arc::new(scripted);
    let gateway = Gateway::new(backend.clone()).with_retry(quick_retry(3));
    let res = gateway.classify(&request(1, TaskKind::Intent, "anything")).unwrap();
    assert_eq!(res.outcome.label(), Some("crypto"));
    assert_eq!(res.backend_calls, 3);
    assert_eq!(res.tokens, 7);
}

#[test]
fn exhausted_retries_abstain_and_are_not_cached() {
    let mut scripted = Scripted::new("casual");
    scripted.fail_after = 0;
    let gateway = Gateway::new(Arc::new(scripted)).with_retry(quick_retry(3));
    let req = request(1, TaskKind::Intent, "anything");
    let first = gateway.classify(&req).unwrap();
    assert!(first.outcome.is_transport_failure());
    assert_eq!(first.backend_calls, 3);
    let second = gateway.classify(&req).unwrap();
    assert!(!second.cache_hit);
    assert_eq!(gateway.backend_calls(), 6);
}

#[test]
fn unparseable_replies_abstain_once() {
    let gateway = Gateway::new(Arc::new(Scripted::new("crypto or fan, hard to say")));
    let req = request(1, TaskKind::Intent, "anything");
    let first = gateway.classify(&req).unwrap();
    assert!(matches!(&first.outcome, Outcome::Abstain(a) if a.reason == AbstainReason::Parse));
    assert!(gateway.classify(&req).unwrap().cache_hit);
}

#[test]
fn outage_suspends_and_resumes_without_losing_messages() {
    let mut c = Community::in_memory(&fixture_config()).unwrap();
    c.ingest_reader("sample", std::fs::File::open(concat!(env!("CARGO_MANIFEST_DIR"), "/data/fixtures/export_small.jsonl")).unwrap(), &hypermod::ingest::JsonLines)
        .unwrap();
    let mut flaky = Scripted::new("casual");
    // The sample repeats a few dozen texts, so most requests are cache hits;
    // the outage starts after ten distinct ones.
    flaky.fail_after = 10;
    let gateway = Gateway::new(Arc::new(flaky)).with_retry(quick_retry(1));
    let opts = BatchOptions { parallelism: 1, unavailable_window: Duration::ZERO, ..BatchOptions::default() };
    let err = c.classify(TaskKind::Intent, &gateway, &opts).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err:?}");
    let done = c.state().primary(TaskKind::Intent).count() as u64;
    assert!(done > 0 && done < 1000, "{done}");
    assert!(c.state().abstains.get(&TaskKind::Intent).is_none_or(|m| m.is_empty()));
    let summary = c.state().batches.last().unwrap();
    assert_eq!(summary.status, BatchStatus::Suspended { remaining: 1000 - done });

    let healthy = Gateway::new(Arc::new(Scripted::new("casual")));
    let resumed = c.classify(TaskKind::Intent, &healthy, &BatchOptions::default()).unwrap();
    assert_eq!(resumed.message_count, 1000 - done);
    assert_eq!(c.state().primary(TaskKind::Intent).count(), 1000);
}

fn fake_completion_server(status: u16, token: &'static str) -> (String, Arc<AtomicUsize>) {
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = axum::Router::new().route(
        "/v1/completions",
        post(move |headers: HeaderMap, body: axum::Json<serde_json::Value>| {
            let counter = counter.clone();
            async move {
                counter.fetch_add(1, Ordering::SeqCst);
                let authorized = headers.get("authorization").and_then(|v| v.to_str().ok()) == Some(&format!("Bearer {token}"));
                let prompt_ok = body["prompt"].as_str().is_some_and(|p| p.contains("gm frens"));
                let status = if !authorized { 401 } else if !prompt_ok { 400 } else { status };
                let reply = serde_json::json!({ "choices": [{ "text": " crypto\n" }], "usage": { "total_tokens": 42 } });
                (StatusCode::from_u16(status).unwrap(), axum::Json(reply))
            }
        }),
    );
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{addr}/v1/completions"), hits)
}

fn remote(endpoint: String, token: &str) -> Gateway {
    let config = RemoteConfig { endpoint, model: "ft-intent".into(), max_tokens: 4, timeout_secs: 5 };
    Gateway::new(Arc::new(RemoteBackend::with_token(config, Some(token.into())).unwrap())).with_retry(quick_retry(2))
}

#[test]
fn remote_backend_round_trip() {
    let (endpoint, hits) = fake_completion_server(200, "s3cret");
    let gateway = remote(endpoint, "s3cret");
    let res = gateway.classify(&request(1, TaskKind::Intent, "gm frens")).unwrap();
    assert_eq!(res.outcome.label(), Some("crypto"));
    assert_eq!(res.tokens, 42);
    assert_eq!(gateway.model_version(), "ft-intent");
    assert!(gateway.classify(&request(1, TaskKind::Intent, "gm frens")).unwrap().cache_hit);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_errors_become_transport_abstains() {
    let (endpoint, hits) = fake_completion_server(503, "s3cret");
    let res = remote(endpoint.clone(), "s3cret").classify(&request(1, TaskKind::Intent, "gm frens")).unwrap();
    assert!(res.outcome.is_transport_failure());
    assert_eq!(hits.load(Ordering::SeqCst), 2);

    let wrong_token = remote(endpoint, "nope").classify(&request(1, TaskKind::Intent, "gm frens")).unwrap();
    match wrong_token.outcome {
        Outcome::Abstain(a) => assert!(a.raw.contains("401"), "{}", a.raw),
        other => panic!("{other:?}"),
    }
}
