//! HTTP surface of the engine.
//!
//! Every handler is a thin mapping onto an [`Engine`] method, run on the
//! blocking pool because the engine does synchronous I/O. Errors leave as
//! `{code, message}`; faults that are not the caller's doing get an opaque id
//! that also appears in the server log.

pub mod cli;

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chatbi_core::engine::{Engine, MessageResponse};
use chatbi_core::eval::{parse_dataset, run_eval, EvalItem, EvalOptions, Metric, MetricReport, Timing};
use chatbi_core::knowledge::{parse_jsonl, RetrievalResult};
use chatbi_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    fn internal(detail: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().simple().to_string();
        tracing::error!(error_id = %id, "{detail}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("internal error; reference {id}"))
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(_) | Error::Json(_) | Error::Ingest(_) => {
                Self::new(StatusCode::BAD_REQUEST, e.code(), e.to_string())
            }
            Error::NotFound(_) => Self::new(StatusCode::NOT_FOUND, e.code(), e.to_string()),
            other => Self::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Malformed bodies are the caller's fault, so they are decoded here rather
/// than through the `Json` extractor, whose rejections are not `{code, message}`.
fn decode<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "json", format!("malformed JSON body: {e}")))
}

async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&engine)).await.map_err(ApiError::internal)?
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/knowledge/import", post(import_knowledge))
        .route("/v1/knowledge/search", get(search_knowledge))
        .route("/v1/eval/run", post(run_evaluation))
        .with_state(engine)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

async fn create_session(State(engine): State<Arc<Engine>>) -> ApiResult<SessionCreated> {
    let session_id = blocking(&engine, |e| Ok(e.create_session()?)).await?;
    Ok(Json(SessionCreated { session_id }))
}

async fn get_session(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let state = blocking(&engine, move |e| Ok(e.session(&id)?)).await?;
    Ok(Json(serde_json::to_value(state).map_err(ApiError::internal)?))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default)]
    pub insight: bool,
}

async fn post_message(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<MessageResponse> {
    let req: MessageRequest = decode(&body)?;
    let reply = blocking(&engine, move |e| Ok(e.handle_message(&id, &req.text, req.insight)?)).await?;
    Ok(Json(reply))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Ingested {
    pub ingested: usize,
}

async fn import_knowledge(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<Ingested> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let ingested = blocking(&engine, move |e| {
        let entries = parse_jsonl(&text)?;
        Ok(e.ingest_knowledge(entries)?)
    })
    .await?;
    Ok(Json(Ingested { ingested }))
}

struct SearchParams {
    q: Option<String>,
    k: Option<usize>,
    n: Option<usize>,
}

async fn search_knowledge(
    State(engine): State<Arc<Engine>>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<RetrievalResult> {
    let num = |key: &str| -> Result<Option<usize>, ApiError> {
        params
            .get(key)
            .map(|v| v.parse().map_err(|_| ApiError::bad_request(format!("`{key}` must be a non-negative integer"))))
            .transpose()
    };
    let p = SearchParams { q: params.get("q").cloned(), k: num("k")?, n: num("n")? };
    let q =
        p.q.filter(|q| !q.trim().is_empty()).ok_or_else(|| ApiError::bad_request("query parameter `q` is required"))?;
    let result = blocking(&engine, move |e| {
        let r = &e.config().retrieval;
        Ok(e.search_knowledge(&q, p.k.unwrap_or(r.k), p.n.unwrap_or(r.n))?)
    })
    .await?;
    Ok(Json(result))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    /// Path to a dataset file, relative to the configuration directory.
    Path(String),
    Inline(Vec<EvalItem>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub dataset: DatasetSpec,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Recorded seconds per SQL text; when absent, timings are measured.
    #[serde(default)]
    pub timings: Option<HashMap<String, f64>>,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Ex]
}

async fn run_evaluation(State(engine): State<Arc<Engine>>, body: Bytes) -> ApiResult<MetricReport> {
    let req: EvalRequest = decode(&body)?;
    let report = blocking(&engine, move |e| {
        let items = match req.dataset {
            DatasetSpec::Inline(items) => {
                items.iter().try_for_each(EvalItem::validate)?;
                items
            }
            DatasetSpec::Path(p) => {
                let path = e.config().resolve(std::path::Path::new(&p));
                let text = std::fs::read_to_string(&path)
                    .map_err(|err| ApiError::bad_request(format!("cannot read dataset {}: {err}", path.display())))?;
                parse_dataset(&text)?
            }
        };
        let opts = EvalOptions {
            db_dir: e.config().resolve(&e.config().database_dir),
            metrics: req.metrics,
            timing: req.timings.map_or_else(Timing::default, Timing::Recorded),
        };
        Ok(run_eval(&items, e, &opts, e.gateway())?)
    })
    .await?;
    Ok(Json(report))
}
