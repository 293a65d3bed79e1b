//! HTTP/JSON API over [`Debugger`].

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tardisp_core::storage::LogicalTime;
use tardisp_core::tracer::Direction;

use crate::error::SessionError;
use crate::session::{CreateSession, Debugger, NavOp};

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = if e.is_not_found() {
            StatusCode::NOT_FOUND
        } else if e.is_internal() {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::BAD_REQUEST
        };
        let pos = e.position();
        ApiError {
            status,
            body: ErrorBody {
                error: e.code().to_string(),
                message: e.to_string(),
                line: pos.map(|p| p.0),
                col: pos.map(|p| p.1),
            },
        }
    }
}

fn bad_request(message: String) -> ApiError {
    ApiError {
        status: StatusCode::BAD_REQUEST,
        body: ErrorBody {
            error: "bad_request".into(),
            message,
            line: None,
            col: None,
        },
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = State<Arc<Debugger>>;

pub fn router(debugger: Arc<Debugger>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/tree", get(tree))
        .route("/sessions/{id}/source", get(source))
        .route("/sessions/{id}/navigate", post(navigate))
        .route("/sessions/{id}/bookmarks", get(bookmarks).post(set_bookmark))
        .route("/sessions/{id}/variables", get(variables))
        .route("/sessions/{id}/variables/{name}", get(variable_page))
        .route("/sessions/{id}/variables/{name}/assignments", get(assignments))
        .route("/sessions/{id}/query", post(query))
        .with_state(debugger)
}

/// Runs blocking engine work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                error: "internal".into(),
                message: e.to_string(),
                line: None,
                col: None,
            },
        }),
    }
}

async fn create_session(
    State(d): Shared,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<crate::session::SessionSummary>), ApiError> {
    let Json(req) = body?;
    let s = blocking(move || d.create_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(s.summary())))
}

async fn summary(State(d): Shared, Path(id): Path<String>) -> ApiResult<crate::session::SessionSummary> {
    Ok(Json(d.session(&id)?.summary()))
}

async fn tree(State(d): Shared, Path(id): Path<String>) -> ApiResult<crate::session::TreeView> {
    Ok(Json(d.session(&id)?.tree_view()))
}

async fn source(State(d): Shared, Path(id): Path<String>) -> ApiResult<crate::session::SourceView> {
    Ok(Json(d.session(&id)?.source_view()))
}

#[derive(Debug, Deserialize)]
struct NavigateBody {
    op: NavOp,
    #[serde(default)]
    step: Option<u64>,
}

async fn navigate(
    State(d): Shared,
    Path(id): Path<String>,
    body: Result<Json<NavigateBody>, JsonRejection>,
) -> ApiResult<crate::session::NavOutcome> {
    let Json(b) = body?;
    Ok(Json(d.session(&id)?.navigate(b.op, b.step)?))
}

#[derive(Debug, Deserialize)]
struct BookmarkBody {
    name: String,
    #[serde(default)]
    step: Option<u64>,
}

#[derive(Debug, Serialize)]
struct StepBody {
    step: Option<LogicalTime>,
}

async fn set_bookmark(
    State(d): Shared,
    Path(id): Path<String>,
    body: Result<Json<BookmarkBody>, JsonRejection>,
) -> ApiResult<StepBody> {
    let Json(b) = body?;
    let at = d.session(&id)?.set_bookmark(&b.name, b.step)?;
    Ok(Json(StepBody { step: Some(at) }))
}

async fn bookmarks(
    State(d): Shared,
    Path(id): Path<String>,
) -> ApiResult<std::collections::BTreeMap<String, LogicalTime>> {
    Ok(Json(d.session(&id)?.bookmarks()))
}

#[derive(Debug, Deserialize)]
struct StepQuery {
    step: Option<u64>,
}

async fn variables(
    State(d): Shared,
    Path(id): Path<String>,
    q: Result<Query<StepQuery>, QueryRejection>,
) -> ApiResult<Vec<crate::session::VariableView>> {
    let Query(q) = q?;
    let s = d.session(&id)?;
    Ok(Json(blocking(move || s.variables(q.step)).await?))
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    step: Option<u64>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

async fn variable_page(
    State(d): Shared,
    Path((id, name)): Path<(String, String)>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<crate::session::Page> {
    let Query(q) = q?;
    let s = d.session(&id)?;
    Ok(Json(blocking(move || s.variable_page(&name, q.step, q.offset, q.limit)).await?))
}

#[derive(Debug, Deserialize)]
struct AssignQuery {
    step: Option<u64>,
    dir: Direction,
}

async fn assignments(
    State(d): Shared,
    Path((id, name)): Path<(String, String)>,
    q: Result<Query<AssignQuery>, QueryRejection>,
) -> ApiResult<StepBody> {
    let Query(q) = q?;
    let step = d.session(&id)?.assignment(&name, q.step, q.dir)?;
    Ok(Json(StepBody { step }))
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    sql: String,
}

async fn query(
    State(d): Shared,
    Path(id): Path<String>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> ApiResult<crate::session::ConsoleResult> {
    let Json(b) = body?;
    let s = d.session(&id)?;
    Ok(Json(blocking(move || s.console_query(&b.sql)).await?))
}

/// Serves the API until the process is stopped.
pub async fn serve(debugger: Arc<Debugger>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, router(debugger)).await
}
