//! Axum routes over [`Service`].

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fairprobe::study::{Demographics, SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::api::{CreateSessionRequest, ErrorBody, ExportQuery, SubmitResponseRequest, SurveyRequest};
use crate::error::ServiceError;
use crate::service::Service;

pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Gone(_) => StatusCode::GONE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError {
            status,
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status();
        let code = if status == StatusCode::UNPROCESSABLE_ENTITY {
            "validation"
        } else {
            "bad_request"
        };
        ApiError {
            status,
            code: code.into(),
            message: r.body_text(),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request".into(),
            message: r.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            error: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    Ok(payload?.0)
}

/// Runs service work that may select tests off the async executor.
async fn blocking<T, F>(service: Arc<Service>, f: F) -> ApiResult<T>
where
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError::from(ServiceError::Io(std::io::Error::other(e.to_string()))))?
        .map_err(ApiError::from)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenarios", get(scenarios))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/current-test", get(current_test))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/demographics", post(record_demographics))
        .route("/surveys", post(submit_survey))
        .route("/export", get(export))
        .with_state(service)
}

async fn health() -> impl IntoResponse {
    Json(json!({ "schema_version": SCHEMA_VERSION, "status": "ok" }))
}

async fn scenarios(State(service): State<Arc<Service>>) -> impl IntoResponse {
    Json(service.scenarios())
}

async fn create_session(
    State(service): State<Arc<Service>>,
    payload: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let req = body(payload)?;
    let created = blocking(service, move |s| s.create_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn current_test(State(service): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(service, move |s| s.current_test(&id)).await?))
}

async fn submit_response(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    payload: Result<Json<SubmitResponseRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let req = body(payload)?;
    Ok(Json(blocking(service, move |s| s.submit_response(&id, &req)).await?))
}

async fn record_demographics(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    payload: Result<Json<Demographics>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let d = body(payload)?;
    Ok(Json(blocking(service, move |s| s.record_demographics(&id, d)).await?))
}

async fn submit_survey(
    State(service): State<Arc<Service>>,
    payload: Result<Json<SurveyRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let req = body(payload)?;
    let record = blocking(service, move |s| s.submit_survey(&req)).await?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn export(
    State(service): State<Arc<Service>>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let query = query?.0;
    let text = blocking(service, move |s| s.export(query)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text))
}
