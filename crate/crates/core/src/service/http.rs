//! HTTP API over the query service.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{QueryService, ServiceError, DEFAULT_HISTORY_LIMIT};
use crate::text::Language;

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default)]
    pub language: Option<Language>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryAccepted {
    pub job_id: String,
}

#[derive(Debug, Deserialize)]
pub struct HistoryParams {
    pub limit: Option<usize>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let code = match self {
            ServiceError::Unauthenticated => StatusCode::UNAUTHORIZED,
            ServiceError::QueryNotPermitted => StatusCode::FORBIDDEN,
            ServiceError::EmptyQuestion => StatusCode::BAD_REQUEST,
            ServiceError::NotFound => StatusCode::NOT_FOUND,
            ServiceError::NotReady(_) => StatusCode::CONFLICT,
            ServiceError::InvalidPermission(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let ServiceError::NotReady(status) = self {
            body["status"] = json!(status);
        }
        (code, Json(body)).into_response()
    }
}

/// Session token from `Authorization: Bearer <token>` (the scheme is
/// optional).
fn token(headers: &HeaderMap) -> Result<String, ServiceError> {
    let raw = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .ok_or(ServiceError::Unauthenticated)?
        .trim();
    let t = match raw.split_once(char::is_whitespace) {
        Some((scheme, rest)) if scheme.eq_ignore_ascii_case("bearer") => rest.trim(),
        _ if raw.eq_ignore_ascii_case("bearer") => "",
        _ => raw,
    };
    if t.is_empty() {
        return Err(ServiceError::Unauthenticated);
    }
    Ok(t.to_string())
}

async fn submit(
    State(svc): State<Arc<QueryService>>,
    headers: HeaderMap,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let t = token(&headers)?;
    let req = match body {
        Ok(Json(req)) => req,
        Err(rejection) => {
            return Ok((
                rejection.status(),
                Json(json!({ "error": rejection.body_text() })),
            )
                .into_response())
        }
    };
    let job_id = svc.submit(&t, &req.question, req.language)?;
    Ok((StatusCode::ACCEPTED, Json(QueryAccepted { job_id })).into_response())
}

async fn status(
    State(svc): State<Arc<QueryService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.get_status(&token(&headers)?, &id)?).into_response())
}

async fn result(
    State(svc): State<Arc<QueryService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.get_result(&token(&headers)?, &id)?).into_response())
}

async fn history(
    State(svc): State<Arc<QueryService>>,
    headers: HeaderMap,
    Query(p): Query<HistoryParams>,
) -> Result<Response, ServiceError> {
    let limit = p.limit.unwrap_or(DEFAULT_HISTORY_LIMIT);
    Ok(Json(svc.get_history(&token(&headers)?, limit)?).into_response())
}

async fn health(State(svc): State<Arc<QueryService>>) -> Json<serde_json::Value> {
    Json(json!({ "ok": true, "audit_degraded": svc.audit().is_degraded() }))
}

pub fn router(svc: Arc<QueryService>) -> Router {
    Router::new()
        .route("/query", post(submit))
        .route("/status/{job_id}", get(status))
        .route("/result/{job_id}", get(result))
        .route("/history", get(history))
        .route("/health", get(health))
        .with_state(svc)
}

/// Serves the API on `bind` until the process stops.
pub async fn serve(svc: Arc<QueryService>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(svc)).await
}
