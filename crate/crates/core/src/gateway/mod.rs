//! One classification interface over interchangeable backends.
//!
//! The gateway renders the task prompt, calls the backend with retries and
//! rate limiting, maps the reply onto the task's closed label set (or an
//! explicit [`Abstain`]) and caches results by task, text, context and model
//! version.

mod limiter;
mod prompt;
mod remote;
mod stub;

pub use limiter::RateLimiter;
pub use prompt::{FewShot, PromptTemplate};
pub use remote::{RemoteBackend, RemoteConfig, BACKEND_TOKEN_ENV};
pub use stub::{RuleTable, StubBackend};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{argmax_label, one_hot, Classification, TaskKind, Tokenizer};
use crate::error::{Error, Result};
use crate::ingest::estimate_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub returns_scores: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// What a backend returned for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub raw: String,
    pub scores: Option<BTreeMap<String, f64>>,
    pub total_tokens: Option<u64>,
}

pub trait ClassifierBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn model_version(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn complete(&self, request: &ClassifyRequest, prompt: &str) -> Result<BackendResponse, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub message_id: String,
    pub task: TaskKind,
    pub text: String,
    #[serde(default)]
    pub context: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    Transport,
    Parse,
}

/// No label could be assigned; `raw` keeps the backend reply (or transport
/// error) for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstain {
    pub message_id: String,
    pub task: TaskKind,
    pub reason: AbstainReason,
    pub raw: String,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Classified(Classification),
    Abstain(Abstain),
}

impl Outcome {
    pub fn message_id(&self) -> &str {
        match self {
            Outcome::Classified(c) => &c.message_id,
            Outcome::Abstain(a) => &a.message_id,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Outcome::Classified(c) => Some(&c.label),
            Outcome::Abstain(_) => None,
        }
    }

    pub fn is_transport_failure(&self) -> bool {
        matches!(self, Outcome::Abstain(a) if a.reason == AbstainReason::Transport)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFailure {
    #[error("response names several labels: {0:?}")]
    Ambiguous(Vec<&'static str>),
    #[error("response is not a label")]
    NoLabel,
}

/// Maps a raw completion onto the task's label set: case-insensitive exact
/// match once surrounding whitespace and punctuation are trimmed.
pub fn parse_label(raw: &str, task: TaskKind) -> Result<&'static str, ParseFailure> {
    let trimmed = raw
        .trim_matches(|c: char| !(c.is_alphanumeric() || c == '_'))
        .to_lowercase();
    if let Some(label) = task.labels().iter().find(|l| **l == trimmed) {
        return Ok(label);
    }
    let words: Vec<&str> = trimmed
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .collect();
    let named: Vec<&'static str> = task
        .labels()
        .iter()
        .copied()
        .filter(|l| words.contains(l))
        .collect();
    if named.len() > 1 {
        Err(ParseFailure::Ambiguous(named))
    } else {
        Err(ParseFailure::NoLabel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    task: TaskKind,
    text: [u8; 32],
    context: [u8; 32],
    model_version: String,
}

fn hash_text(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn hash_context(context: &[String]) -> [u8; 32] {
    let mut h = Sha256::new();
    for c in context {
        h.update((c.len() as u64).to_le_bytes());
        h.update(c.as_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
enum Cached {
    Label {
        label: &'static str,
        scores: Option<BTreeMap<String, f64>>,
    },
    Unparseable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyResult {
    pub outcome: Outcome,
    pub tokens: u64,
    pub backend_calls: u32,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub parallelism: usize,
    /// Requests per second; `None` leaves calls unthrottled.
    pub rate_limit: Option<f64>,
    /// A transport outage longer than this suspends the batch.
    pub unavailable_window: Duration,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            parallelism: 4,
            rate_limit: None,
            unavailable_window: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BatchStatus {
    Completed,
    /// Backend outage; `remaining` messages have no committed outcome yet.
    Suspended { remaining: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub run_id: String,
    pub task: TaskKind,
    pub backend_id: String,
    pub model_version: String,
    pub message_count: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub classified: u64,
    pub abstained: u64,
    pub token_usage: u64,
    pub estimated_cost: f64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub label_counts: BTreeMap<String, u64>,
    pub status: BatchStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRun {
    pub summary: BatchSummary,
    /// One outcome per message when completed; in request order.
    pub outcomes: Vec<Outcome>,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

pub struct Gateway {
    backend: Arc<dyn ClassifierBackend>,
    templates: BTreeMap<TaskKind, PromptTemplate>,
    cache: Mutex<HashMap<CacheKey, Cached>>,
    retry: RetryPolicy,
    tokenizer: Tokenizer,
    price_per_1k_tokens: f64,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ClassifierBackend>) -> Self {
        Gateway {
            backend,
            templates: TaskKind::ALL
                .iter()
                .map(|t| (*t, PromptTemplate::default_for(*t)))
                .collect(),
            cache: Mutex::new(HashMap::new()),
            retry: RetryPolicy::default(),
            tokenizer: Tokenizer::CharsDiv4,
            price_per_1k_tokens: 0.0,
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn stub() -> Self {
        Self::new(Arc::new(StubBackend::builtin()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_pricing(mut self, tokenizer: Tokenizer, price_per_1k_tokens: f64) -> Self {
        self.tokenizer = tokenizer;
        self.price_per_1k_tokens = price_per_1k_tokens;
        self
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.templates.insert(template.task, template);
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn model_version(&self) -> &str {
        self.backend.model_version()
    }

    pub fn template(&self, task: TaskKind) -> &PromptTemplate {
        &self.templates[&task]
    }

    /// Total backend calls made through this gateway, retries included.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn classify(&self, request: &ClassifyRequest) -> Result<ClassifyResult> {
        self.classify_limited(request, None)
    }

    fn classify_limited(&self, request: &ClassifyRequest, limiter: Option<&RateLimiter>) -> Result<ClassifyResult> {
        if request.text.trim().is_empty() {
            return Err(Error::validation(format!(
                "message {} has no text to classify",
                request.message_id
            )));
        }
        let template = self.template(request.task);
        let context: &[String] = if template.include_context { &request.context } else { &[] };
        let key = CacheKey {
            task: request.task,
            text: hash_text(&request.text),
            context: hash_context(context),
            model_version: self.model_version().to_string(),
        };
        if let Some(hit) = self.cache.lock().get(&key).cloned() {
            return Ok(ClassifyResult {
                outcome: self.outcome_from(request, hit),
                tokens: 0,
                backend_calls: 0,
                cache_hit: true,
            });
        }

        let prompt = template.render(&request.text, context);
        let mut calls = 0;
        let mut backoff = self.retry.initial_backoff;
        let mut last_err = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            if let Some(l) = limiter {
                l.acquire();
            }
            calls += 1;
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(request, &prompt) {
                Ok(resp) => {
                    let tokens = resp.total_tokens.unwrap_or_else(|| {
                        estimate_tokens(&prompt, self.tokenizer) + estimate_tokens(&resp.raw, self.tokenizer)
                    });
                    let cached = self.interpret(request.task, resp);
                    self.cache.lock().insert(key, cached.clone());
                    return Ok(ClassifyResult {
                        outcome: self.outcome_from(request, cached),
                        tokens,
                        backend_calls: calls,
                        cache_hit: false,
                    });
                }
                Err(e) => last_err = e.0,
            }
        }
        Ok(ClassifyResult {
            outcome: Outcome::Abstain(Abstain {
                message_id: request.message_id.clone(),
                task: request.task,
                reason: AbstainReason::Transport,
                raw: last_err,
                model_version: self.model_version().to_string(),
            }),
            tokens: 0,
            backend_calls: calls,
            cache_hit: false,
        })
    }

    fn interpret(&self, task: TaskKind, resp: BackendResponse) -> Cached {
        let scores = resp.scores.filter(|s| {
            s.iter().all(|(l, v)| task.contains(l) && (0.0..=1.0).contains(v)) && argmax_label(task, s).is_some()
        });
        if let Some(scores) = scores {
            let label = argmax_label(task, &scores).expect("checked above");
            return Cached::Label { label, scores: Some(scores) };
        }
        match parse_label(&resp.raw, task) {
            Ok(label) => Cached::Label { label, scores: None },
            Err(_) => Cached::Unparseable(resp.raw),
        }
    }

    fn outcome_from(&self, request: &ClassifyRequest, cached: Cached) -> Outcome {
        match cached {
            Cached::Label { label, scores } => Outcome::Classified(Classification {
                message_id: request.message_id.clone(),
                task: request.task,
                label: label.to_string(),
                scores: Some(scores.unwrap_or_else(|| one_hot(request.task, label))),
                backend_id: self.backend_id().to_string(),
                model_version: self.model_version().to_string(),
                created_at: Utc::now(),
            }),
            Cached::Unparseable(raw) => Outcome::Abstain(Abstain {
                message_id: request.message_id.clone(),
                task: request.task,
                reason: AbstainReason::Parse,
                raw,
                model_version: self.model_version().to_string(),
            }),
        }
    }

    /// Classifies every request with up to `parallelism` calls in flight.
    pub fn run_batch(&self, task: TaskKind, requests: &[ClassifyRequest], opts: &BatchOptions) -> Result<BatchRun> {
        if opts.parallelism == 0 {
            return Err(Error::validation("parallelism must be at least 1"));
        }
        if let Some(rate) = opts.rate_limit {
            if !(rate > 0.0) {
                return Err(Error::validation("rate limit must be positive"));
            }
        }
        if let Some(r) = requests.iter().find(|r| r.task != task) {
            return Err(Error::validation(format!(
                "request {} is for {}, batch is {task}",
                r.message_id, r.task
            )));
        }
        let started_at = Utc::now();
        let limiter = opts.rate_limit.map(RateLimiter::per_second);
        let next = AtomicUsize::new(0);
        let suspended = AtomicBool::new(false);
        let outage_since: Mutex<Option<Instant>> = Mutex::new(None);
        let slots: Vec<Mutex<Option<ClassifyResult>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        let first_error: Mutex<Option<Error>> = Mutex::new(None);

        let worker = || loop {
            if suspended.load(Ordering::Acquire) {
                return;
            }
            let i = next.fetch_add(1, Ordering::AcqRel);
            if i >= requests.len() {
                return;
            }
            match self.classify_limited(&requests[i], limiter.as_ref()) {
                Ok(res) => {
                    {
                        let mut since = outage_since.lock();
                        if res.outcome.is_transport_failure() {
                            let start = *since.get_or_insert_with(Instant::now);
                            if start.elapsed() >= opts.unavailable_window {
                                suspended.store(true, Ordering::Release);
                            }
                        } else {
                            *since = None;
                        }
                    }
                    *slots[i].lock() = Some(res);
                }
                Err(e) => {
                    first_error.lock().get_or_insert(e);
                    suspended.store(true, Ordering::Release);
                    return;
                }
            }
        };
        let threads = opts.parallelism.min(requests.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
        if let Some(e) = first_error.into_inner() {
            return Err(e);
        }

        let was_suspended = suspended.into_inner();
        let results: Vec<ClassifyResult> = slots
            .into_iter()
            .filter_map(|s| s.into_inner())
            .filter(|r| !(was_suspended && r.outcome.is_transport_failure()))
            .collect();
        let mut summary = BatchSummary {
            run_id: format!(
                "run-{}-{}-{}",
                started_at.format("%Y%m%dT%H%M%S%3f"),
                task,
                RUN_COUNTER.fetch_add(1, Ordering::Relaxed)
            ),
            task,
            backend_id: self.backend_id().to_string(),
            model_version: self.model_version().to_string(),
            message_count: requests.len() as u64,
            started_at,
            finished_at: Utc::now(),
            classified: 0,
            abstained: 0,
            token_usage: 0,
            estimated_cost: 0.0,
            backend_calls: 0,
            cache_hits: 0,
            label_counts: task.labels().iter().map(|l| (l.to_string(), 0)).collect(),
            status: BatchStatus::Completed,
        };
        for r in &results {
            summary.token_usage += r.tokens;
            summary.backend_calls += u64::from(r.backend_calls);
            summary.cache_hits += u64::from(r.cache_hit);
            match &r.outcome {
                Outcome::Classified(c) => {
                    summary.classified += 1;
                    *summary.label_counts.entry(c.label.clone()).or_insert(0) += 1;
                }
                Outcome::Abstain(_) => summary.abstained += 1,
            }
        }
        summary.estimated_cost = summary.token_usage as f64 * self.price_per_1k_tokens / 1000.0;
        if was_suspended {
            summary.status = BatchStatus::Suspended {
                remaining: requests.len() as u64 - results.len() as u64,
            };
        }
        Ok(BatchRun {
            summary,
            outcomes: results.into_iter().map(|r| r.outcome).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str, task: TaskKind, text: &str) -> ClassifyRequest {
        ClassifyRequest {
            message_id: id.into(),
            task,
            text: text.into(),
            context: Vec::new(),
        }
    }

    #[test]
    fn parse_label_rules() {
        assert_eq!(parse_label("Crypto", TaskKind::Intent), Ok("crypto"));
        assert_eq!(
            parse_label(" not_toxic_not_spam.\n", TaskKind::Moderation),
            Ok("not_toxic_not_spam")
        );
        assert!(matches!(
            parse_label("it's kind of toxic and spam", TaskKind::Moderation),
            Err(ParseFailure::Ambiguous(_))
        ));
        assert_eq!(parse_label("maybe", TaskKind::Sentiment), Err(ParseFailure::NoLabel));
        assert_eq!(parse_label("the label is fan", TaskKind::Intent), Err(ParseFailure::NoLabel));
    }

    #[test]
    fn stub_exemplars() {
        let g = Gateway::stub();
        let label = |task, text| g.classify(&req("m", task, text)).unwrap().outcome.label().unwrap().to_string();
        assert_eq!(label(TaskKind::Intent, "when is the next airdrop dropping?"), "crypto");
        assert_eq!(label(TaskKind::Sentiment, "Hey that was a great game!"), "positive");
        assert_eq!(label(TaskKind::Sentiment, "Yeah that's just the way it is."), "neutral");
    }

    #[test]
    fn empty_text_rejected() {
        assert!(Gateway::stub().classify(&req("m", TaskKind::Intent, "  ")).is_err());
    }

    #[test]
    fn empty_batch() {
        let run = Gateway::stub().run_batch(TaskKind::Intent, &[], &BatchOptions::default()).unwrap();
        assert_eq!(run.summary.message_count, 0);
        assert!(run.outcomes.is_empty());
        assert_eq!(run.summary.status, BatchStatus::Completed);
    }

    #[test]
    fn rerun_hits_cache() {
        let g = Gateway::stub();
        let reqs: Vec<_> = (0..10).map(|i| req(&format!("m{i}"), TaskKind::Intent, &format!("gm number {i}"))).collect();
        let first = g.run_batch(TaskKind::Intent, &reqs, &BatchOptions::default()).unwrap();
        assert_eq!(first.summary.backend_calls, 10);
        let second = g.run_batch(TaskKind::Intent, &reqs, &BatchOptions::default()).unwrap();
        assert_eq!(second.summary.backend_calls, 0);
        assert_eq!(second.summary.cache_hits, 10);
        let labels = |r: &BatchRun| r.outcomes.iter().map(|o| o.label().map(str::to_string)).collect::<Vec<_>>();
        assert_eq!(labels(&first), labels(&second));
    }

    #[test]
    fn mixed_task_batch_rejected() {
        let reqs = [req("a", TaskKind::Sentiment, "great")];
        assert!(Gateway::stub().run_batch(TaskKind::Intent, &reqs, &BatchOptions::default()).is_err());
        let opts = BatchOptions { parallelism: 0, ..Default::default() };
        assert!(Gateway::stub().run_batch(TaskKind::Sentiment, &reqs, &opts).is_err());
    }
}
