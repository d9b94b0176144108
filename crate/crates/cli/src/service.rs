//! JSON-over-HTTP service.
//!
//! Readers work on an immutable store snapshot; every mutation runs on a
//! private copy under the writer lock and is published with one pointer
//! swap, so a reader sees either the old store or the new one.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thali_core::fca::{CompositionReport, UserProfile};
use thali_core::resolver::{RecipeDoc, ReviewStatus};
use thali_core::store::KnowledgeStore;

use crate::app::{self, AnalyzeRequest, CompareQuery, Engine, IngestRecord};
use crate::error::ApiError;

/// The published request/response schema document.
pub const API_SCHEMA: &str = include_str!("../../../schemas/api.schema.json");

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub status: JobStatus,
    pub total: usize,
    pub completed: usize,
    pub results: Vec<IngestRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

pub struct Service {
    engine: Engine,
    current: ArcSwap<KnowledgeStore>,
    writer: Mutex<()>,
    reports: Mutex<HashMap<(String, String), Arc<CompositionReport>>>,
    jobs: Mutex<BTreeMap<String, Job>>,
    next_job: AtomicU64,
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError::internal("lock poisoned")
}

impl Service {
    pub fn new(engine: Engine, store: KnowledgeStore) -> Arc<Self> {
        store.teach(&engine.resolver);
        Arc::new(Service {
            engine,
            current: ArcSwap::from_pointee(store),
            writer: Mutex::new(()),
            reports: Mutex::new(HashMap::new()),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn snapshot(&self) -> Arc<KnowledgeStore> {
        self.current.load_full()
    }

    /// Runs `f` on a copy of the store, persists it and publishes it.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut KnowledgeStore) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let _w = self.writer.lock().map_err(poisoned)?;
        let mut next = (*self.current.load_full()).clone();
        let out = f(&mut next)?;
        if next.path().is_some() {
            next.save()?;
        }
        next.teach(&self.engine.resolver);
        self.current.store(Arc::new(next));
        self.reports.lock().map_err(poisoned)?.clear();
        Ok(out)
    }

    /// Composition of a stored recipe, cached per (recipe id, FCT version).
    pub fn composition(&self, id: &str) -> Result<Arc<CompositionReport>, ApiError> {
        let store = self.snapshot();
        let key = (id.to_string(), store.fct().version());
        if let Some(r) = self.reports.lock().map_err(poisoned)?.get(&key) {
            return Ok(r.clone());
        }
        let report = Arc::new(app::composition(&self.engine, &store, id)?);
        // a store swapped in meanwhile may have cleared the cache; only keep
        // the report if the snapshot is still current
        if Arc::ptr_eq(&store, &self.current.load_full()) {
            self.reports.lock().map_err(poisoned)?.insert(key, report.clone());
        }
        Ok(report)
    }

    pub fn job(&self, id: &str) -> Result<Job, ApiError> {
        self.jobs
            .lock()
            .map_err(poisoned)?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new("not-found", format!("no job {id:?}")))
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Ok(mut jobs) = self.jobs.lock() {
            if let Some(j) = jobs.get_mut(id) {
                f(j);
            }
        }
    }

    /// Queues an ingest of `docs` and returns the job id. The whole batch is
    /// published at once when it finishes.
    pub fn start_ingest(self: &Arc<Self>, docs: Vec<(String, String)>) -> Result<Job, ApiError> {
        let id = format!("job-{}", self.next_job.fetch_add(1, Ordering::SeqCst));
        let job = Job {
            id: id.clone(),
            status: JobStatus::Queued,
            total: docs.len(),
            completed: 0,
            results: Vec::new(),
            error: None,
        };
        self.jobs.lock().map_err(poisoned)?.insert(id.clone(), job.clone());
        let svc = self.clone();
        tokio::task::spawn_blocking(move || {
            let res = svc.mutate(|store| {
                svc.update_job(&id, |j| j.status = JobStatus::Running);
                Ok(app::ingest_documents(&svc.engine, store, &docs, |r| {
                    svc.update_job(&id, |j| {
                        j.completed += 1;
                        j.results.push(r.clone());
                    })
                }))
            });
            svc.update_job(&id, |j| match res {
                Ok(_) => j.status = JobStatus::Done,
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            });
        });
        Ok(job)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.is_empty() {
        return Err(ApiError::bad_body("request body is empty"));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_body(e.to_string()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(t)| t)
        .map_err(|e| ApiError::new("invalid-argument", e.body_text()))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/search", get(search))
        .route("/recipes", get(list_recipes))
        .route("/recipes/{id}", get(get_recipe))
        .route("/recipes/{id}/composition", get(get_composition))
        .route("/analyze", post(analyze))
        .route("/compare", get(compare))
        .route("/recommendations", post(recommendations))
        .route("/review", get(list_review))
        .route("/review/{id}", get(get_review))
        .route("/review/{id}/approve", post(approve_review))
        .route("/review/{id}/reject", post(reject_review))
        .route("/ingest", post(ingest))
        .route("/jobs/{id}", get(get_job))
        .fallback(|| async { ApiError::new("not-found", "no such endpoint") })
        .with_state(svc)
}

async fn health(State(svc): State<Arc<Service>>) -> Json<Value> {
    let s = svc.snapshot();
    Json(json!({
        "status": "ok",
        "fct_version": s.fct().version(),
        "recipes": s.recipe_count(),
        "food_records": s.fct().len(),
    }))
}

async fn schema() -> Response {
    ([("content-type", "application/json")], API_SCHEMA).into_response()
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    q: Option<String>,
    limit: Option<usize>,
}

async fn search(State(svc): State<Arc<Service>>, q: Result<Query<SearchQuery>, QueryRejection>) -> ApiResult<Value> {
    let q = query(q)?;
    let text =
        q.q.filter(|t| !t.trim().is_empty())
            .ok_or_else(|| ApiError::new("invalid-argument", "q is required"))?;
    let hits = svc.snapshot().search_fuzzy(&text, q.limit.unwrap_or(10));
    Ok(Json(json!({ "query": text, "hits": hits })))
}

async fn list_recipes(State(svc): State<Arc<Service>>) -> Json<Value> {
    let s = svc.snapshot();
    let recipes: Vec<Value> = s
        .recipes()
        .map(|r| json!({ "id": r.id, "title": r.title, "tags": r.tags, "servings": r.servings }))
        .collect();
    Json(json!({ "recipes": recipes }))
}

async fn get_recipe(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = svc.snapshot();
    Ok(Json(s.recipe(&id)?).into_response())
}

async fn get_composition(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let report = blocking(move || svc.composition(&id)).await?;
    Ok(Json(&*report).into_response())
}

async fn analyze(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<CompositionReport> {
    let req: AnalyzeRequest = parse_body(&body)?;
    blocking(move || {
        let store = svc.snapshot();
        app::analyze(&svc.engine, &store, &req)
    })
    .await
    .map(Json)
}

async fn compare(
    State(svc): State<Arc<Service>>,
    q: Result<Query<CompareQuery>, QueryRejection>,
) -> ApiResult<thali_core::fca::ComparisonTable> {
    let q = query(q)?;
    blocking(move || app::compare(&svc.engine, &svc.snapshot(), &q))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct KQuery {
    k: Option<usize>,
}

async fn recommendations(
    State(svc): State<Arc<Service>>,
    q: Result<Query<KQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult<thali_core::fca::Recommendations> {
    let k = query(q)?.k;
    let profile: UserProfile = parse_body(&body)?;
    blocking(move || app::recommendations(&svc.engine, &svc.snapshot(), &profile, k))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct StatusQuery {
    status: Option<String>,
}

async fn list_review(
    State(svc): State<Arc<Service>>,
    q: Result<Query<StatusQuery>, QueryRejection>,
) -> ApiResult<Value> {
    let status = query(q)?.status.map(|s| ReviewStatus::parse(&s)).transpose()?;
    let s = svc.snapshot();
    Ok(Json(json!({ "items": s.reviews().list(status) })))
}

async fn get_review(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = svc.snapshot();
    Ok(Json(s.reviews().get(&id)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Decision {
    note: Option<String>,
}

fn decision(body: &Bytes) -> Result<Decision, ApiError> {
    if body.is_empty() {
        Ok(Decision::default())
    } else {
        parse_body(body)
    }
}

async fn approve_review(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let d = decision(&body)?;
    blocking(move || {
        let changed = svc.mutate(|s| Ok(s.approve_review(&id, d.note, &svc.engine.resolver)?))?;
        let item = svc.snapshot().reviews().get(&id)?.clone();
        Ok(json!({ "changed": changed, "item": item }))
    })
    .await
    .map(Json)
}

async fn reject_review(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let d = decision(&body)?;
    blocking(move || {
        let changed = svc.mutate(|s| Ok(s.reject_review(&id, d.note)?))?;
        let item = svc.snapshot().reviews().get(&id)?.clone();
        Ok(json!({ "changed": changed, "item": item }))
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum IngestBody {
    Batch { documents: Vec<IngestDoc> },
    One(Box<IngestDoc>),
}

#[derive(Debug, Deserialize)]
struct IngestDoc {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    recipe: Option<RecipeDoc>,
}

async fn ingest(State(svc): State<Arc<Service>>, body: Bytes) -> Result<Response, ApiError> {
    let body: IngestBody = parse_body(&body)?;
    let docs = match body {
        IngestBody::Batch { documents } => documents,
        IngestBody::One(d) => vec![*d],
    };
    if docs.is_empty() {
        return Err(ApiError::bad_body("no documents"));
    }
    let docs = docs
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let text = match (d.text, d.recipe) {
                (Some(t), None) => t,
                (None, Some(r)) => serde_json::to_string(&r)?,
                _ => return Err(ApiError::bad_body("each document needs exactly one of text or recipe")),
            };
            Ok((d.name.unwrap_or_else(|| format!("document-{}", i + 1)), text))
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    let job = svc.start_ingest(docs)?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_job(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Job> {
    svc.job(&id).map(Json)
}

/// Binds and serves until interrupted.
pub async fn serve(svc: Arc<Service>, addr: &str) -> Result<(), ApiError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ApiError::new("io-error", format!("cannot bind {addr}: {e}")))?;
    eprintln!(
        "listening on http://{}",
        listener.local_addr().map(|a| a.to_string()).unwrap_or_default()
    );
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ApiError::new("io-error", e.to_string()))
}
