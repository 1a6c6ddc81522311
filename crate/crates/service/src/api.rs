//! The `/v1` HTTP routes.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::actions::sha256_hex;
use crate::error::{Result, ServiceError};
use crate::jobs::{JobOutput, Jobs};
use crate::service::{Mutation, RequestMeta, Service};
use crate::wire::{JobAccepted, JobStatus};

/// Longest a mutation request waits for its job before answering 202.
pub const MAX_WAIT_MS: u64 = 60_000;

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    pub jobs: Arc<Jobs>,
    /// Static bearer token; requests are unauthenticated when absent.
    pub token: Option<String>,
    pub default_wait_ms: u64,
}

#[derive(Debug, Deserialize)]
struct WaitQuery {
    wait_ms: Option<u64>,
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError::Validation {
            message: format!("invalid request body: {}", e.inner()),
            field_paths: if path == "." { Vec::new() } else { vec![path] },
        }
    })
}

fn meta(headers: &HeaderMap, route: &str, body: &[u8]) -> RequestMeta {
    let text = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
    let mut keyed = route.as_bytes().to_vec();
    keyed.push(0);
    keyed.extend_from_slice(body);
    RequestMeta {
        actor: text("x-actor").unwrap_or_else(|| "anonymous".into()),
        idempotency_key: text("idempotency-key"),
        request_digest: sha256_hex(&keyed),
    }
}

fn respond(status: u16, body: Value) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(body)).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn create_trial(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response> {
    let req = parse(&body)?;
    let meta = meta(&headers, "create_trial", &body);
    let service = app.service.clone();
    let (status, resp) = blocking(move || service.create_trial(req, &meta)).await?;
    Ok(respond(status, serde_json::to_value(resp).expect("serializes")))
}

async fn run_mutation(app: AppState, trial_id: String, mutation: Mutation, meta: RequestMeta, wait_ms: u64) -> Result<Response> {
    {
        let service = app.service.clone();
        let id = trial_id.clone();
        blocking(move || service.ensure_exists(&id)).await?;
    }
    let service = app.service.clone();
    let kind = mutation.kind();
    let id = trial_id.clone();
    let (job_id, rx) = app.jobs.submit(&trial_id, kind, move || match service.mutate(&id, &mutation, &meta) {
        Ok((status, body)) => JobOutput { status, body },
        Err(e) => JobOutput {
            status: e.status().as_u16(),
            body: serde_json::to_value(e.body()).expect("serializes"),
        },
    });
    // `wait_ms=0` asks for the poll token without waiting at all.
    let waited = if wait_ms == 0 {
        None
    } else {
        tokio::time::timeout(Duration::from_millis(wait_ms.min(MAX_WAIT_MS)), rx).await.ok()
    };
    match waited {
        Some(Ok(out)) => Ok(respond(out.status, out.body)),
        Some(Err(_)) => Err(ServiceError::Internal("job was dropped".into())),
        None => {
            let accepted = JobAccepted {
                poll: format!("/v1/trials/{trial_id}/jobs/{job_id}"),
                job_id,
                status: JobStatus::Queued,
            };
            Ok((StatusCode::ACCEPTED, Json(accepted)).into_response())
        }
    }
}

async fn enroll_patient(
    State(app): State<AppState>,
    Path(trial_id): Path<String>,
    Query(q): Query<WaitQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response> {
    let req = parse(&body)?;
    let meta = meta(&headers, "enroll_patient", &body);
    let wait = q.wait_ms.unwrap_or(app.default_wait_ms);
    run_mutation(app, trial_id, Mutation::Enroll(req), meta, wait).await
}

async fn record_outcome(
    State(app): State<AppState>,
    Path((trial_id, patient)): Path<(String, String)>,
    Query(q): Query<WaitQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response> {
    let patient: usize = patient
        .parse()
        .map_err(|_| ServiceError::NotFound(format!("patient {patient} does not exist")))?;
    let request = parse(&body)?;
    let meta = meta(&headers, &format!("record_outcome/{patient}"), &body);
    let wait = q.wait_ms.unwrap_or(app.default_wait_ms);
    run_mutation(app, trial_id, Mutation::Outcome { patient, request }, meta, wait).await
}

async fn get_report(State(app): State<AppState>, Path(trial_id): Path<String>) -> Result<Response> {
    let service = app.service.clone();
    let report = blocking(move || service.report(&trial_id)).await?;
    Ok(Json(report).into_response())
}

async fn get_job(State(app): State<AppState>, Path((trial_id, job_id)): Path<(String, String)>) -> Result<Response> {
    match app.jobs.get(&job_id) {
        Some(view) if view.trial_id == trial_id => Ok(Json(view).into_response()),
        _ => Err(ServiceError::NotFound(format!("job {job_id} does not exist"))),
    }
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let ok = req
            .headers()
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound("no such route".into())
}

/// Builds the application router. When `console_dir` is given, its files are
/// served at `/` for the browser console.
pub fn router(app: AppState, console_dir: Option<PathBuf>) -> Router {
    let v1 = Router::new()
        .route("/trials", post(create_trial))
        .route("/trials/{id}/patients", post(enroll_patient))
        .route("/trials/{id}/patients/{pid}/outcomes", post(record_outcome))
        .route("/trials/{id}/report", get(get_report))
        .route("/trials/{id}/jobs/{job}", get(get_job))
        .fallback(not_found)
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .with_state(app);
    let router = Router::new()
        .nest("/v1", v1)
        .route("/healthz", get(|| async { "ok" }));
    match console_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router.fallback(not_found),
    }
}
