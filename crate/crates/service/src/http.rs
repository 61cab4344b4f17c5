//! The REST surface of the gateway.
//!
//! - `POST /jobs`: multipart form with repeated `file` parts; returns
//!   `201 {"job_id":"..."}`.
//! - `GET /jobs/{id}`: job state, results, and response time.
//! - `GET /metrics`: the metrics report.
//!
//! Response collection also runs lazily on reads, so status is fresh even
//! between controller periods.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use elastiq_core::gateway::{GatewayError, JobState};
use elastiq_core::System;

pub fn router(sys: Arc<System>) -> Router {
    Router::new()
        .route("/jobs", post(submit_job))
        .route("/jobs/:id", get(job_status))
        .route("/metrics", get(metrics))
        .layer(DefaultBodyLimit::max(256 * 1024 * 1024))
        .with_state(sys)
}

/// Runs the router on an already-bound listener inside its own runtime.
/// Blocks until the server exits.
pub fn serve_blocking(sys: Arc<System>, listener: std::net::TcpListener) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        listener.set_nonblocking(true)?;
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, router(sys)).await?;
        Ok(())
    })
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<GatewayError> for ApiError {
    fn from(err: GatewayError) -> Self {
        let status = match &err {
            GatewayError::EmptyBatch
            | GatewayError::DuplicateName(_)
            | GatewayError::EmptyName => StatusCode::BAD_REQUEST,
            GatewayError::BatchTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            GatewayError::UnknownJob(_) => StatusCode::NOT_FOUND,
            GatewayError::Store(_) | GatewayError::Queue(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: err.to_string(),
        }
    }
}

async fn submit_job(
    State(sys): State<Arc<System>>,
    mut multipart: Multipart,
) -> Result<Response, ApiError> {
    let mut images = Vec::new();
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(field)) => field,
            Ok(None) => break,
            Err(e) => {
                return Err(ApiError {
                    status: StatusCode::BAD_REQUEST,
                    message: format!("multipart: {e}"),
                })
            }
        };
        if field.name() != Some("file") {
            continue;
        }
        let name = field.file_name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError {
            status: StatusCode::BAD_REQUEST,
            message: format!("multipart: {e}"),
        })?;
        images.push((name, bytes.to_vec()));
    }
    let job_id = sys.gateway.submit_job(images)?;
    Ok((StatusCode::CREATED, Json(json!({ "job_id": job_id }))).into_response())
}

#[derive(Serialize)]
struct JobStatusResponse {
    state: &'static str,
    results: Vec<ResultEntry>,
    response_time_ms: Option<u64>,
}

#[derive(Serialize)]
struct ResultEntry {
    image: String,
    label: String,
}

async fn job_status(
    State(sys): State<Arc<System>>,
    Path(id): Path<String>,
) -> Result<Json<JobStatusResponse>, ApiError> {
    sys.gateway.collect_responses()?;
    let status = sys.gateway.job_status(&id)?;
    Ok(Json(JobStatusResponse {
        state: match status.state {
            JobState::Pending => "pending",
            JobState::Completed => "completed",
        },
        results: status
            .results
            .into_iter()
            .map(|r| ResultEntry {
                image: r.image_name,
                label: r.label,
            })
            .collect(),
        response_time_ms: status.response_time.map(|d| d.as_millis()),
    }))
}

async fn metrics(State(sys): State<Arc<System>>) -> Result<Response, ApiError> {
    sys.gateway.collect_responses()?;
    let report = sys.metrics.report(&sys.fabric, &sys.queues);
    Ok(Json(report).into_response())
}
