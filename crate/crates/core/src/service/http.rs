use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;

use super::{ArtifactKind, JobService, ServiceError, StageEvent};
use crate::orchestrator::{JobConfig, RevisionRequest};

const POLL: Duration = Duration::from_millis(100);

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) | ServiceError::NotYetAvailable(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::InvalidScopeForState { .. } => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}

pub fn router(service: JobService) -> Router {
    Router::new()
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(get_status))
        .route("/jobs/{id}/artifacts/{kind}", get(get_artifact))
        .route("/jobs/{id}/revisions", post(post_revision))
        .route("/jobs/{id}/events", get(stream_events))
        .with_state(service)
}

pub async fn serve(service: JobService, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create_job(
    State(svc): State<JobService>,
    body: Result<Json<JobConfig>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ServiceError> {
    let Json(config) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let id = svc.create_job(config)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

async fn get_status(State(svc): State<JobService>, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(svc.get_status(&id)?))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u32>,
}

async fn get_artifact(
    State(svc): State<JobService>,
    Path((id, kind)): Path<(String, String)>,
    Query(q): Query<VersionQuery>,
) -> Result<impl IntoResponse, ServiceError> {
    let kind: ArtifactKind = kind.parse()?;
    let (bytes, content_type) = svc.get_artifact(&id, kind, q.version)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes))
}

async fn post_revision(
    State(svc): State<JobService>,
    Path(id): Path<String>,
    body: Result<Json<RevisionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ServiceError> {
    let Json(request) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let version = svc.post_revision(&id, request)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id, "version": version }))))
}

#[derive(Deserialize)]
struct EventQuery {
    from: Option<usize>,
}

/// `Last-Event-ID` is the index of the last event the client saw.
fn resume_index(headers: &HeaderMap, q: &EventQuery) -> usize {
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|s| s.trim().parse::<usize>().ok());
    match (last_seen, q.from) {
        (Some(i), _) => i + 1,
        (None, Some(f)) => f,
        (None, None) => 0,
    }
}

struct Cursor {
    svc: JobService,
    id: String,
    next: usize,
    pending: VecDeque<StageEvent>,
    open: bool,
}

async fn stream_events(
    State(svc): State<JobService>,
    Path(id): Path<String>,
    Query(q): Query<EventQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    svc.get_status(&id)?;
    let cursor = Cursor {
        svc,
        id,
        next: resume_index(&headers, &q),
        pending: VecDeque::new(),
        open: true,
    };
    let events = stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.pending.pop_front() {
                let event = Event::default()
                    .id(ev.index.to_string())
                    .event("stage")
                    .json_data(&ev)
                    .expect("stage events serialize");
                return Some((Ok(event), c));
            }
            if !c.open {
                return None;
            }
            let (batch, open) = match c.svc.events_since(&c.id, c.next) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("event stream for {} ended: {e}", c.id);
                    return None;
                }
            };
            c.next += batch.len();
            c.pending.extend(batch);
            c.open = open;
            if c.pending.is_empty() && c.open {
                tokio::time::sleep(POLL).await;
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
