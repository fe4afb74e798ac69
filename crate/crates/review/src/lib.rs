//! HTTP/JSON API behind the review console: browse runs and diffs, file
//! annotations, edit ICL examples and launch reruns.
//!
//! State lives in flat files under the runs directory: `index.jsonl` (runs),
//! `annotations.jsonl` and `icl_edits.jsonl`. Request and response bodies
//! are described in `api/openapi.json`.

mod icl;
mod ledger;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use polynorm_core::dataset::load_dataset;
use polynorm_core::eval::{read_samples, run_eval, EvalPlan, SystemSpec};
use polynorm_core::hillclimb::{cluster_errors, compare_runs, ErrorCluster, IterationStore, RunComparison};
use polynorm_core::model::parse_category;
use polynorm_core::prompting::{IclSelection, IclStore, InstructionTemplate};
use polynorm_core::reporting::{diff_sample, DiffRecord};
use polynorm_core::{Category, IclExample, IterationRecord, Locale, RunReport, ScoredSample};
use serde::{Deserialize, Serialize};

pub use icl::{IclEdit, IclEditRecord, IclHistory, IclOp, IclVersion};
pub use ledger::Ledger;

pub const TOKEN_HEADER: &str = "x-polynorm-token";
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const ICL_EDITS_FILE: &str = "icl_edits.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("runs directory: {0}")]
    Store(#[from] polynorm_core::hillclimb::HillclimbError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Error bodies are `{"error": message}`.
#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Conflict(String),
    #[error("missing or wrong access token")]
    Unauthorized,
    #[error("{0}")]
    Internal(String),
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct ServiceConfig {
    pub runs_dir: PathBuf,
    /// Initial ICL store; edits are replayed on top of it.
    pub icl: IclStore,
    /// Dataset file per locale, used for reruns.
    pub datasets: BTreeMap<Locale, PathBuf>,
    /// Systems reruns may use, by provider name.
    pub providers: BTreeMap<String, SystemSpec>,
    /// Built review UI, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Shared token required in the `x-polynorm-token` header.
    pub token: Option<String>,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RerunStatus {
    Running,
    Completed,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RerunKey {
    locale: Locale,
    provider: String,
    icl_version: String,
    parent_run_id: Option<String>,
}

struct Inner {
    store: Arc<IterationStore>,
    annotations: Ledger<ReviewAnnotation>,
    icl: IclHistory,
    datasets: BTreeMap<Locale, PathBuf>,
    providers: BTreeMap<String, SystemSpec>,
    token: Option<String>,
    parallelism: usize,
    reruns: Mutex<HashMap<String, (RerunKey, RerunStatus)>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn open(config: &ServiceConfig) -> Result<AppState, ServiceError> {
        let store = IterationStore::open(&config.runs_dir)?;
        let annotations = Ledger::open(config.runs_dir.join(ANNOTATIONS_FILE))?;
        let icl = IclHistory::open(config.icl.clone(), config.runs_dir.join(ICL_EDITS_FILE))?;
        Ok(AppState(Arc::new(Inner {
            store: Arc::new(store),
            annotations,
            icl,
            datasets: config.datasets.clone(),
            providers: config.providers.clone(),
            token: config.token.clone(),
            parallelism: config.parallelism.max(1),
            reruns: Mutex::new(HashMap::new()),
        })))
    }

    fn record(&self, run_id: &str) -> ApiResult<IterationRecord> {
        let records = self.0.store.records().map_err(|e| ApiError::Internal(e.to_string()))?;
        records
            .into_iter()
            .find(|r| r.run_id == run_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown run {run_id}")))
    }

    fn samples(&self, run_id: &str) -> ApiResult<Vec<ScoredSample>> {
        self.record(run_id)?;
        read_samples(&self.0.store.dir().join(run_id)).map_err(|e| ApiError::Internal(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub parent_run_id: Option<String>,
    pub locale: Locale,
    pub system_id: String,
    pub iteration: u32,
    pub icl_set_hash: String,
    pub overall_rate: f64,
    pub overall_bleu: f64,
    pub samples: usize,
    pub created_at: DateTime<Utc>,
}

impl From<&IterationRecord> for RunSummary {
    fn from(r: &IterationRecord) -> Self {
        RunSummary {
            run_id: r.run_id.clone(),
            parent_run_id: r.parent_run_id.clone(),
            locale: r.config.locale.clone(),
            system_id: r.config.system_id.clone(),
            iteration: r.config.iteration,
            icl_set_hash: r.config.icl_set_hash.clone(),
            overall_rate: r.report.overall_rate,
            overall_bleu: r.report.overall_bleu,
            samples: r.report.per_category.values().map(|c| c.n).sum(),
            created_at: r.report.created_at,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunDetail {
    pub run_id: String,
    #[serde(flatten)]
    pub status: RerunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

#[derive(Debug, Serialize)]
pub struct SamplePage {
    pub run_id: String,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
    pub items: Vec<DiffRecord>,
}

#[derive(Debug, Deserialize)]
pub struct SampleQuery {
    pub category: Option<String>,
    #[serde(default)]
    pub only_errors: bool,
    pub page: Option<usize>,
    pub per_page: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Error,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnnotationRequest {
    pub sample_id: String,
    pub run_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub error_category: Option<Category>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub suggested_reference: Option<String>,
    pub author: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewAnnotation {
    pub id: String,
    pub sample_id: String,
    pub run_id: String,
    pub verdict: Verdict,
    pub error_category: Option<Category>,
    pub note: String,
    pub suggested_reference: Option<String>,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Deserialize)]
pub struct AnnotationQuery {
    pub run_id: Option<String>,
    pub sample_id: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct IclQuery {
    pub locale: Option<Locale>,
    pub version: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct IclSnapshot {
    pub version: String,
    pub examples: Vec<IclExample>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RerunRequest {
    pub locale: Locale,
    pub provider: String,
    pub icl_version: String,
    #[serde(default)]
    pub parent_run_id: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RerunAccepted {
    pub run_id: String,
    #[serde(flatten)]
    pub status: RerunStatus,
}

#[derive(Debug, Deserialize)]
pub struct ClusterQuery {
    pub top_k: Option<usize>,
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Json<Vec<RunSummary>>> {
    let records = state.0.store.records().map_err(|e| ApiError::Internal(e.to_string()))?;
    let mut summaries: Vec<(usize, RunSummary)> = records.iter().map(RunSummary::from).enumerate().collect();
    summaries.sort_by(|(i, a), (j, b)| b.created_at.cmp(&a.created_at).then(j.cmp(i)));
    Ok(Json(summaries.into_iter().map(|(_, s)| s).collect()))
}

async fn get_run(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Json<RunDetail>> {
    let pending = state.0.reruns.lock().unwrap_or_else(|e| e.into_inner()).get(&run_id).map(|(_, s)| s.clone());
    match (state.record(&run_id), pending) {
        (Ok(record), _) => Ok(Json(RunDetail {
            run_id,
            status: RerunStatus::Completed,
            summary: Some(RunSummary::from(&record)),
            report: Some(record.report),
        })),
        (Err(_), Some(status)) => Ok(Json(RunDetail { run_id, status, summary: None, report: None })),
        (Err(e), None) => Err(e),
    }
}

async fn run_samples(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Json<SamplePage>> {
    let category = q
        .category
        .as_deref()
        .filter(|c| !c.is_empty())
        .map(parse_category)
        .transpose()
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let page = q.page.unwrap_or(1).max(1);
    let per_page = q.per_page.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let selected: Vec<ScoredSample> = state
        .samples(&run_id)?
        .into_iter()
        .filter(|s| category.is_none_or(|c| s.sample.category == c))
        .filter(|s| !q.only_errors || s.is_error())
        .collect();
    let items = selected.iter().skip((page - 1) * per_page).take(per_page).map(diff_sample).collect();
    Ok(Json(SamplePage { run_id, page, per_page, total: selected.len(), items }))
}

async fn compare(
    State(state): State<AppState>,
    Path((before, after)): Path<(String, String)>,
) -> ApiResult<Json<RunComparison<f64>>> {
    let (a, b) = (state.record(&before)?, state.record(&after)?);
    compare_runs(&a.report, &b.report).map(Json).map_err(|e| ApiError::Unprocessable(e.to_string()))
}

async fn clusters(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(q): Query<ClusterQuery>,
) -> ApiResult<Json<Vec<ErrorCluster>>> {
    let scored = state.samples(&run_id)?;
    cluster_errors(&scored, q.top_k.unwrap_or(5)).map(Json).map_err(|e| ApiError::Unprocessable(e.to_string()))
}

async fn post_annotation(
    State(state): State<AppState>,
    Json(req): Json<AnnotationRequest>,
) -> ApiResult<(StatusCode, Json<ReviewAnnotation>)> {
    if req.verdict == Verdict::Error && req.error_category.is_none() {
        return Err(ApiError::Unprocessable("an error verdict needs an error_category".into()));
    }
    if req.author.trim().is_empty() {
        return Err(ApiError::Unprocessable("author is required".into()));
    }
    if !state.samples(&req.run_id)?.iter().any(|s| s.sample.id == req.sample_id) {
        return Err(ApiError::NotFound(format!("run {} has no sample {}", req.run_id, req.sample_id)));
    }
    let stored = state.0.annotations.append_with(|existing| {
        Ok::<_, ApiError>(ReviewAnnotation {
            id: format!("ann-{:06}", existing.len() + 1),
            sample_id: req.sample_id,
            run_id: req.run_id,
            verdict: req.verdict,
            error_category: req.error_category,
            note: req.note,
            suggested_reference: req.suggested_reference,
            author: req.author,
            created_at: Utc::now(),
        })
    })?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn list_annotations(
    State(state): State<AppState>,
    Query(q): Query<AnnotationQuery>,
) -> Json<Vec<ReviewAnnotation>> {
    let all = state.0.annotations.snapshot();
    Json(
        all.iter()
            .filter(|a| q.run_id.as_ref().is_none_or(|r| &a.run_id == r))
            .filter(|a| q.sample_id.as_ref().is_none_or(|s| &a.sample_id == s))
            .cloned()
            .collect(),
    )
}

async fn get_icl(State(state): State<AppState>, Query(q): Query<IclQuery>) -> ApiResult<Json<IclSnapshot>> {
    let store = match &q.version {
        Some(v) => state.0.icl.find(v).ok_or_else(|| ApiError::NotFound(format!("unknown ICL version {v}")))?,
        None => state.0.icl.current(),
    };
    let examples = match &q.locale {
        Some(l) => store.for_locale(l).to_vec(),
        None => store.iter().cloned().collect(),
    };
    Ok(Json(IclSnapshot { version: store.version().to_string(), examples }))
}

async fn icl_history(State(state): State<AppState>) -> Json<Vec<IclVersion>> {
    Json(state.0.icl.history())
}

async fn put_icl(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(edit): Json<IclEdit>,
) -> ApiResult<Json<IclEditRecord>> {
    let expected = headers
        .get("if-match")
        .map(|v| v.to_str().map(|s| s.trim().trim_matches('"').to_string()))
        .transpose()
        .map_err(|_| ApiError::Unprocessable("If-Match must be a version digest".into()))?;
    state.0.icl.edit(edit, expected.as_deref()).map(Json)
}

async fn post_rerun(
    State(state): State<AppState>,
    Json(req): Json<RerunRequest>,
) -> ApiResult<(StatusCode, Json<RerunAccepted>)> {
    let inner = &state.0;
    let icl = inner.icl.find(&req.icl_version).ok_or_else(|| ApiError::NotFound(format!("unknown ICL version {}", req.icl_version)))?;
    if let Some(parent) = &req.parent_run_id {
        state.record(parent)?;
    }
    let spec = inner
        .providers
        .get(&req.provider)
        .ok_or_else(|| ApiError::Unprocessable(format!("unknown provider {}", req.provider)))?;
    let dataset_path = inner
        .datasets
        .get(&req.locale)
        .ok_or_else(|| ApiError::Unprocessable(format!("no dataset configured for {}", req.locale)))?;
    let key = RerunKey {
        locale: req.locale.clone(),
        provider: req.provider.clone(),
        icl_version: req.icl_version.clone(),
        parent_run_id: req.parent_run_id.clone(),
    };
    let dataset = load_dataset(dataset_path, &req.locale).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let system = spec.build().map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let plan = EvalPlan {
        dataset,
        icl: (*icl).clone(),
        template: InstructionTemplate::default(),
        selection: IclSelection::All,
        system,
        parallelism: inner.parallelism,
        parent_run_id: req.parent_run_id.clone(),
        iteration: None,
        created_at: Utc::now(),
    };
    let run_id = plan.run_id(&inner.store).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    {
        let mut reruns = inner.reruns.lock().unwrap_or_else(|e| e.into_inner());
        if reruns.values().any(|(k, s)| k == &key && *s == RerunStatus::Running) {
            return Err(ApiError::Conflict("an identical rerun is already in flight".into()));
        }
        reruns.insert(run_id.clone(), (key, RerunStatus::Running));
    }
    let worker = state.clone();
    let id = run_id.clone();
    tokio::task::spawn_blocking(move || {
        let status = match run_eval(&plan, &worker.0.store) {
            Ok(outcome) => {
                if outcome.record.run_id != id {
                    log::warn!("rerun {id} was recorded as {}", outcome.record.run_id);
                }
                RerunStatus::Completed
            }
            Err(e) => {
                log::error!("rerun {id} failed: {e}");
                RerunStatus::Failed { error: e.to_string() }
            }
        };
        if let Some(entry) = worker.0.reruns.lock().unwrap_or_else(|e| e.into_inner()).get_mut(&id) {
            entry.1 = status;
        }
    });
    Ok((StatusCode::ACCEPTED, Json(RerunAccepted { run_id, status: RerunStatus::Running })))
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.0.token {
        let given = request.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(token.as_str()) {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/samples", get(run_samples))
        .route("/api/runs/{id}/clusters", get(clusters))
        .route("/api/runs/{a}/compare/{b}", get(compare))
        .route("/api/annotations", post(post_annotation).get(list_annotations))
        .route("/api/icl", get(get_icl).put(put_icl))
        .route("/api/icl/history", get(icl_history))
        .route("/api/reruns", post(post_rerun))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub fn app(config: &ServiceConfig) -> Result<Router, ServiceError> {
    Ok(router(AppState::open(config)?, config.static_dir.clone()))
}

/// Bind `addr` and serve until Ctrl-C.
pub async fn serve(config: &ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    let app = app(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr, source })?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
