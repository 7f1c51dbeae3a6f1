//! HTTP+JSON API over one community.
//!
//! Reads run concurrently against the current state; every mutation goes
//! through the single writer behind the lock. Moderator endpoints require
//! `Authorization: Bearer <HYPERMOD_API_TOKEN>` when a token is configured.
//! Every non-2xx response body is one [`ApiError`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, BackendKind};
use crate::contribution::RewardState;
use crate::cost::{compute, CostScenario};
use crate::domain::{ExampleSource, TaskKind, Weights};
use crate::error::{ApiError, Error, ErrorCode};
use crate::eval::krippendorff_alpha;
use crate::gateway::Gateway;
use crate::moderation::{Flag, FlagState, Page};
use crate::pipeline::{evaluate_examples, read_examples, Community, ExportFilter, FlagDecision, RewardDecision};
use crate::sentiment::{parse_window, DAILY};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 1_000;

pub struct AppState {
    community: RwLock<Community>,
    config: AppConfig,
    gateways: Mutex<HashMap<BackendKind, Arc<Gateway>>>,
    api_token: Option<String>,
}

impl AppState {
    pub fn new(community: Community, config: AppConfig, api_token: Option<String>) -> Arc<Self> {
        Arc::new(AppState {
            community: RwLock::new(community),
            config,
            gateways: Mutex::new(HashMap::new()),
            api_token,
        })
    }

    /// Installs a pre-built gateway (tests use this to inject fake backends).
    pub fn with_gateway(self: Arc<Self>, kind: BackendKind, gateway: Gateway) -> Arc<Self> {
        self.gateways.lock().insert(kind, Arc::new(gateway));
        self
    }

    pub fn community(&self) -> parking_lot::RwLockReadGuard<'_, Community> {
        self.community.read()
    }

    fn gateway(&self, kind: BackendKind) -> Result<Arc<Gateway>, Error> {
        let mut map = self.gateways.lock();
        if let Some(g) = map.get(&kind) {
            return Ok(g.clone());
        }
        let g = Arc::new(self.config.gateway(kind)?);
        map.insert(kind, g.clone());
        Ok(g)
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), Rejection> {
        let Some(expected) = &self.api_token else {
            return Ok(());
        };
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given == Some(expected.as_str()) {
            Ok(())
        } else {
            Err(Rejection::Unauthorized)
        }
    }
}

/// Handler error carrying the response status.
pub enum Rejection {
    Api(Error),
    Unauthorized,
}

impl From<Error> for Rejection {
    fn from(e: Error) -> Self {
        Rejection::Api(e)
    }
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::Validation => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::BackendUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        match self {
            Rejection::Api(e) => {
                let body = ApiError::from(&e);
                (status_for(body.code), Json(body)).into_response()
            }
            Rejection::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                Json(ApiError {
                    code: ErrorCode::Validation,
                    message: "missing or wrong bearer token".into(),
                }),
            )
                .into_response(),
        }
    }
}

type ApiResult<T> = Result<Json<T>, Rejection>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Error> {
    serde_json::from_slice(body).map_err(|e| Error::validation(format!("request body: {e}")))
}

fn parse_opt<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, Error>
where
    T::Err: std::fmt::Display,
{
    q.get(key)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|e| Error::validation(format!("query {key}: {e}"))))
        .transpose()
}

fn limit(q: &HashMap<String, String>) -> Result<usize, Error> {
    Ok(parse_opt::<usize>(q, "limit")?.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE))
}

fn parse_time(q: &HashMap<String, String>, key: &str) -> Result<Option<DateTime<Utc>>, Error> {
    q.get(key)
        .filter(|v| !v.is_empty())
        .map(|v| {
            DateTime::parse_from_rfc3339(v)
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| Error::validation(format!("query {key}: {e}")))
        })
        .transpose()
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, Error> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Internal(format!("worker failed: {e}")))?
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .route("/api/ingest", post(ingest))
        .route("/api/classify/run", post(classify_run))
        .route("/api/flags", get(list_flags))
        .route("/api/flags/:id/decision", post(decide_flag))
        .route("/api/audit", post(audit))
        .route("/api/personas", get(personas))
        .route("/api/contributions/leaderboard", get(leaderboard))
        .route("/api/rewards", get(list_rewards))
        .route("/api/rewards/:id/decision", post(decide_reward))
        .route("/api/sentiment", get(sentiment))
        .route("/api/evaluate", post(evaluate))
        .route("/api/metrics/:task", get(metrics))
        .route("/api/agreement", post(agreement))
        .route("/api/config/weights", get(get_weights).put(put_weights))
        .route("/api/cost", post(cost_scenario))
        .route("/api/cost/:preset", get(cost_preset))
        .route("/api/export/retraining", post(export_retraining))
        .fallback(|| async { Rejection::Api(Error::not_found("no such endpoint")) })
        .layer(axum::middleware::map_response(ensure_api_error))
        .with_state(state)
}

/// Replaces framework-generated error bodies (method not allowed and the
/// like) with an [`ApiError`].
async fn ensure_api_error(resp: Response) -> Response {
    let status = resp.status();
    let is_json = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if status.is_success() || is_json {
        return resp;
    }
    let code = match status {
        StatusCode::NOT_FOUND => ErrorCode::NotFound,
        StatusCode::CONFLICT => ErrorCode::Conflict,
        s if s.is_client_error() => ErrorCode::Validation,
        StatusCode::SERVICE_UNAVAILABLE => ErrorCode::BackendUnavailable,
        _ => ErrorCode::Internal,
    };
    let body = ApiError {
        code,
        message: status.canonical_reason().unwrap_or("error").to_string(),
    };
    let mut out = Response::new(Body::from(serde_json::to_vec(&body).expect("serializable")));
    *out.status_mut() = status;
    out.headers_mut()
        .insert(header::CONTENT_TYPE, header::HeaderValue::from_static("application/json"));
    out
}

#[derive(Deserialize)]
struct IngestBody {
    path: PathBuf,
}

async fn ingest(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<crate::ingest::IngestReport> {
    app.authorize(&headers)?;
    let req: IngestBody = parse_body(&body)?;
    let report = blocking(move || app.community.write().ingest_file(&req.path)).await?;
    Ok(Json(report))
}

#[derive(Deserialize)]
struct ClassifyBody {
    task: TaskKind,
    #[serde(default = "stub_backend")]
    backend: BackendKind,
    parallelism: Option<usize>,
    rate_limit: Option<f64>,
}

fn stub_backend() -> BackendKind {
    BackendKind::Stub
}

async fn classify_run(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<crate::gateway::BatchSummary> {
    app.authorize(&headers)?;
    let req: ClassifyBody = parse_body(&body)?;
    let gateway = app.gateway(req.backend)?;
    let mut opts = app.config.backend.batch_options();
    if let Some(p) = req.parallelism {
        opts.parallelism = p;
    }
    if req.rate_limit.is_some() {
        opts.rate_limit = req.rate_limit;
    }
    let summary = blocking(move || {
        let requests = app.community.read().pending_requests(req.task, gateway.model_version())?;
        let run = gateway.run_batch(req.task, &requests, &opts)?;
        app.community.write().commit_batch(&run, &requests)
    })
    .await?;
    Ok(Json(summary))
}

/// A flag together with the message it concerns and its channel context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagView {
    #[serde(flatten)]
    pub flag: Flag,
    pub text: Option<String>,
    pub context: Vec<String>,
}

async fn list_flags(State(app): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Page<FlagView>> {
    let state = parse_opt::<FlagState>(&q, "state")?;
    let page = {
        let c = app.community();
        let page = c.flags(state, limit(&q)?, parse_opt::<u64>(&q, "cursor")?);
        let st = c.state();
        Page {
            items: page
                .items
                .into_iter()
                .map(|flag| FlagView {
                    text: st.messages.get(&flag.message_id).map(|m| m.content.clone()),
                    context: st.context_of(&flag.message_id).unwrap_or_default(),
                    flag,
                })
                .collect(),
            next: page.next,
        }
    };
    Ok(Json(page))
}

async fn decide_flag(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<Flag> {
    app.authorize(&headers)?;
    let decision: FlagDecision = parse_body(&body)?;
    let key = idempotency_key(&headers);
    let flag = blocking(move || app.community.write().decide_flag(&id, decision, key.as_deref())).await?;
    Ok(Json(flag))
}

#[derive(Deserialize)]
struct AuditBody {
    sample_size: usize,
    #[serde(default)]
    seed: u64,
}

async fn audit(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Vec<Flag>> {
    app.authorize(&headers)?;
    let req: AuditBody = parse_body(&body)?;
    let flags = blocking(move || app.community.write().false_negative_audit(req.sample_size, req.seed)).await?;
    Ok(Json(flags))
}

async fn personas(State(app): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<crate::pipeline::PersonaPage> {
    let persona = parse_opt(&q, "persona")?;
    let n = limit(&q)?;
    let cursor = q.get("cursor").cloned();
    Ok(Json(app.community().personas(persona, n, cursor.as_deref())))
}

async fn leaderboard(State(app): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Vec<crate::contribution::LeaderboardEntry>> {
    let n = limit(&q)?;
    Ok(Json(app.community().leaderboard(n)))
}

async fn list_rewards(State(app): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Vec<crate::contribution::RewardRecommendation>> {
    let state = parse_opt::<RewardState>(&q, "state")?;
    Ok(Json(app.community().rewards(state)))
}

async fn decide_reward(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<crate::contribution::RewardRecommendation> {
    app.authorize(&headers)?;
    let decision: RewardDecision = parse_body(&body)?;
    let key = idempotency_key(&headers);
    let r = blocking(move || app.community.write().decide_reward(&id, decision, key.as_deref())).await?;
    Ok(Json(r))
}

async fn sentiment(State(app): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Vec<crate::sentiment::SentimentBucket>> {
    let window = match q.get("window") {
        Some(w) => parse_window(w)?,
        None => DAILY,
    };
    let (from, to) = (parse_time(&q, "from")?, parse_time(&q, "to")?);
    let channel = q.get("channel").filter(|c| !c.is_empty()).cloned();
    Ok(Json(app.community().sentiment(channel.as_deref(), from, to, window)?))
}

#[derive(Deserialize)]
struct EvaluateBody {
    task: TaskKind,
    test_split_path: Option<PathBuf>,
    #[serde(default = "stub_backend")]
    backend: BackendKind,
}

async fn evaluate(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<crate::eval::EvaluationReport> {
    app.authorize(&headers)?;
    let req: EvaluateBody = parse_body(&body)?;
    let gateway = app.gateway(req.backend)?;
    let record = blocking(move || {
        let examples = match &req.test_split_path {
            Some(p) => read_examples(p)?,
            None => app.community.read().test_examples(req.task),
        };
        let record = evaluate_examples(req.task, &examples, &gateway)?;
        app.community.write().record_evaluation(record.clone())?;
        Ok(record)
    })
    .await?;
    Ok(Json(record.report))
}

async fn metrics(State(app): State<Arc<AppState>>, Path(task): Path<String>) -> ApiResult<crate::eval::EvaluationReport> {
    let task: TaskKind = task.parse()?;
    let c = app.community();
    let record = c
        .last_metrics(task)
        .ok_or_else(|| Error::not_found(format!("no {task} evaluation recorded")))?;
    Ok(Json(record.report.clone()))
}

#[derive(Deserialize)]
struct AgreementBody {
    grid: Vec<Vec<Option<String>>>,
}

async fn agreement(body: Bytes) -> ApiResult<crate::eval::AgreementReport> {
    let req: AgreementBody = parse_body(&body)?;
    Ok(Json(krippendorff_alpha(&req.grid)?))
}

async fn get_weights(State(app): State<Arc<AppState>>) -> ApiResult<crate::domain::CommunityConfig> {
    Ok(Json(app.community().config().clone()))
}

#[derive(Deserialize)]
struct WeightsBody {
    weights: Weights,
}

async fn put_weights(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<crate::domain::CommunityConfig> {
    app.authorize(&headers)?;
    let req: WeightsBody = parse_body(&body)?;
    let cfg = blocking(move || app.community.write().set_weights(req.weights)).await?;
    Ok(Json(cfg))
}

async fn cost_preset(Path(preset): Path<String>) -> ApiResult<crate::cost::CostReport> {
    Ok(Json(compute(&CostScenario::preset(&preset)?)?))
}

#[derive(Deserialize)]
struct CostBody {
    scenario: CostScenario,
}

async fn cost_scenario(body: Bytes) -> ApiResult<crate::cost::CostReport> {
    let req: CostBody = parse_body(&body)?;
    Ok(Json(compute(&req.scenario)?))
}

#[derive(Deserialize)]
struct ExportBody {
    task: TaskKind,
    #[serde(default = "curation_source")]
    source: Option<ExampleSource>,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
}

fn curation_source() -> Option<ExampleSource> {
    Some(ExampleSource::Curation)
}

async fn export_retraining(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<crate::pipeline::RetrainingExport> {
    app.authorize(&headers)?;
    let req: ExportBody = parse_body(&body)?;
    let dir = app.config.export_dir();
    let out = blocking(move || {
        let filter = ExportFilter {
            task: req.task,
            source: req.source,
            from: req.from,
            to: req.to,
        };
        app.community.read().export_retraining(&filter, &dir)
    })
    .await?;
    Ok(Json(out))
}

/// Serves the API on `0.0.0.0:port` until the process is stopped.
pub async fn serve(app: Arc<AppState>, port: u16) -> Result<(), Error> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(app)).await?;
    Ok(())
}
