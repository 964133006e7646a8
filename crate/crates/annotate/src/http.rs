//! JSON API consumed by the browser front end.
//!
//! | route | success | failures |
//! |---|---|---|
//! | `GET /api/tasks/next?annotator=` | 200 task, 204 none left | 422 no annotator |
//! | `POST /api/tasks/{nct_id}/label` | 201 created, 200 repeat | 404, 409, 410, 422 |
//! | `GET /api/stats` | 200 progress | |
//! | `GET /api/discrepancies` | 200 list | |
//! | `GET /api/export` | 200 corpus CSV | 500 |

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::service::{AnnotationService, LabelSubmission, SubmitError, SubmitOutcome};

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(State(svc): State<Arc<AnnotationService>>, Query(q): Query<NextQuery>) -> Response {
    let Some(annotator) = q.annotator.filter(|a| !a.trim().is_empty()) else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "annotator query parameter is required");
    };
    match svc.next_task(&annotator) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit_label(
    State(svc): State<Arc<AnnotationService>>,
    Path(nct_id): Path<String>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Response {
    let Json(submission) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    match svc.submit(&nct_id, &submission) {
        Ok(SubmitOutcome::Created(a)) => (StatusCode::CREATED, Json(a)).into_response(),
        Ok(SubmitOutcome::Repeated(a)) => (StatusCode::OK, Json(a)).into_response(),
        Err(e @ SubmitError::UnknownRecord(_)) => error(StatusCode::NOT_FOUND, e),
        Err(e @ (SubmitError::InvalidLabel(_) | SubmitError::MissingAnnotator)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, e)
        }
        Err(SubmitError::AlreadyLabeled(existing)) => (
            StatusCode::CONFLICT,
            Json(json!({
                "error": format!("record {} is already labeled", existing.nct_id),
                "existing": existing,
            })),
        )
            .into_response(),
        Err(e @ SubmitError::LeaseGone(_)) => error(StatusCode::GONE, e),
        Err(e @ SubmitError::Store(_)) => {
            tracing::error!(error = %e, "label commit failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, e)
        }
    }
}

async fn stats(State(svc): State<Arc<AnnotationService>>) -> Response {
    Json(svc.stats()).into_response()
}

async fn discrepancies(State(svc): State<Arc<AnnotationService>>) -> Response {
    Json(svc.discrepancies()).into_response()
}

async fn export(State(svc): State<Arc<AnnotationService>>) -> Response {
    match svc.export_csv() {
        Ok(bytes) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

/// API routes, plus static files from `ui_dir` for every other path.
pub fn router(service: Arc<AnnotationService>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{nct_id}/label", post(submit_label))
        .route("/api/stats", get(stats))
        .route("/api/discrepancies", get(discrepancies))
        .route("/api/export", get(export))
        .with_state(service);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<AnnotationService>,
    ui_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service, ui_dir))
        .with_graceful_shutdown(shutdown)
        .await
}
