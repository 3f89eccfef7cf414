use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use fsl_core::PathologyId;
use serde::Deserialize;

use crate::error::ServiceError;
use crate::events::RelabelEvent;
use crate::service::{FailurePage, ImageView, LatestReport, LoopService, PathologySummary, RelabelAck, RetrainBody, DEFAULT_PAGE_SIZE};
use crate::state::JobRecord;

type Svc = State<Arc<LoopService>>;
type ApiResult<T> = Result<Json<T>, ServiceError>;

#[derive(Deserialize)]
struct FailureQuery {
    pathology: String,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn pathologies(State(svc): Svc) -> Json<Vec<PathologySummary>> {
    Json(svc.pathologies())
}

async fn failures(State(svc): Svc, Query(q): Query<FailureQuery>) -> ApiResult<FailurePage> {
    let p: PathologyId = q.pathology.parse()?;
    Ok(Json(svc.list_failures(p, q.page.unwrap_or(1), q.page_size.unwrap_or(DEFAULT_PAGE_SIZE))?))
}

async fn image(State(svc): Svc, Path(id): Path<String>) -> ApiResult<ImageView> {
    Ok(Json(svc.image(&id)?))
}

async fn relabel(State(svc): Svc, Json(ev): Json<RelabelEvent>) -> Result<(StatusCode, Json<RelabelAck>), ServiceError> {
    let ack = svc.submit_relabel(ev)?;
    let status = if ack.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(ack)))
}

async fn retrain(State(svc): Svc, Json(body): Json<RetrainBody>) -> Result<(StatusCode, Json<JobRecord>), ServiceError> {
    Ok((StatusCode::ACCEPTED, Json(svc.enqueue_retrain(body)?)))
}

async fn job(State(svc): Svc, Path(id): Path<String>) -> ApiResult<JobRecord> {
    Ok(Json(svc.job(&id)?))
}

async fn jobs(State(svc): Svc) -> Json<Vec<JobRecord>> {
    Json(svc.jobs())
}

async fn latest(State(svc): Svc) -> Json<LatestReport> {
    Json(svc.latest_report())
}

pub fn router(svc: Arc<LoopService>) -> Router {
    Router::new()
        .route("/pathologies", get(pathologies))
        .route("/failures", get(failures))
        .route("/images/{*id}", get(image))
        .route("/relabels", post(relabel))
        .route("/retrain", post(retrain))
        .route("/jobs", get(jobs))
        .route("/jobs/{id}", get(job))
        .route("/reports/latest", get(latest))
        .with_state(svc)
}

pub async fn serve(svc: Arc<LoopService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(svc)).await
}
