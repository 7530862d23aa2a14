//! HTTP front end for the annotation engine.
//!
//! Every route is a thin adapter over one [`Engine`] method; request and
//! response bodies are the engine's own types serialised as JSON. Errors come
//! back as [`ApiError`] envelopes.

mod error;

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use volprompt::engine::{Engine, NewSession, PromptRequest, PropagateRequest};
use volprompt::orchestrator::{JobEvent, JobRecord};
use volprompt::refine::RefineOp;
use volprompt::volume::{Axis, LabelmapFormat, WindowLevel};

pub use error::{classify, ApiError};

/// Default cap on uploaded volume size.
pub const DEFAULT_UPLOAD_LIMIT: usize = 2 << 30;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
}

/// Runs `f` on the blocking pool; engine calls take locks and do CPU work.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> volprompt::Result<T> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "INTERNAL",
            e.to_string(),
        )),
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

fn body(b: Result<Bytes, BytesRejection>) -> ApiResult<Bytes> {
    b.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "PAYLOAD_TOO_LARGE", r.body_text())
        } else {
            ApiError::bad_request(r.body_text())
        }
    })
}

fn path_index(s: &str) -> ApiResult<usize> {
    s.parse()
        .map_err(|_| ApiError::bad_request(format!("slice index {s:?} is not a non-negative integer")))
}

pub fn router(engine: Arc<Engine>, upload_limit: usize) -> Router {
    let state = AppState { engine };
    Router::new()
        .route(
            "/volumes",
            post(upload_volume).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/volumes/{volume}", get(volume_info))
        .route("/volumes/{volume}/slices/{axis}/{index}", get(slice_png))
        .route("/predictors", get(predictors))
        .route("/predictors/rescan", post(rescan))
        .route("/sessions", post(create_session))
        .route("/sessions/{session}", get(session_info))
        .route("/sessions/{session}/prompts", post(add_prompts))
        .route("/sessions/{session}/masks/{index}", get(mask))
        .route("/sessions/{session}/propagate", post(propagate))
        .route("/sessions/{session}/refine", post(refine))
        .route("/sessions/{session}/undo", post(undo))
        .route("/sessions/{session}/redo", post(redo))
        .route("/sessions/{session}/labelmap", get(labelmap))
        .route("/jobs/{job}", get(job_status))
        .route("/jobs/{job}/cancel", post(cancel_job))
        .route("/jobs/{job}/events", get(job_events))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such route") })
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr, upload_limit: usize) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine, upload_limit))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
}

async fn upload_volume(State(s): State<AppState>, bytes: Result<Bytes, BytesRejection>) -> ApiResult<Response> {
    let bytes = body(bytes)?;
    let info = blocking(move || s.engine.load_volume_bytes(&bytes)).await?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn volume_info(State(s): State<AppState>, Path(volume): Path<String>) -> ApiResult<Response> {
    let info = blocking(move || s.engine.volume_info(&volume)).await?;
    Ok(Json(info).into_response())
}

#[derive(Deserialize)]
struct WindowQuery {
    window: Option<f64>,
    level: Option<f64>,
}

async fn slice_png(
    State(s): State<AppState>,
    Path((volume, axis, index)): Path<(String, String, String)>,
    Query(q): Query<WindowQuery>,
) -> ApiResult<Response> {
    let axis: Axis = axis.parse().map_err(ApiError::from)?;
    let index = path_index(&index)?;
    let window = match (q.window, q.level) {
        (Some(window), Some(level)) => Some(WindowLevel { window, level }),
        (None, None) => None,
        _ => return Err(ApiError::bad_request("window and level go together")),
    };
    let png = blocking(move || Ok(s.engine.render(&volume, axis, index, window)?.to_png())).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn predictors(State(s): State<AppState>) -> Json<Vec<volprompt::predictor::PredictorDescriptor>> {
    Json(s.engine.predictors())
}

async fn rescan(State(s): State<AppState>) -> ApiResult<Response> {
    let list = blocking(move || s.engine.rescan_bridge()).await?;
    Ok(Json(list).into_response())
}

async fn create_session(State(s): State<AppState>, bytes: Result<Bytes, BytesRejection>) -> ApiResult<Response> {
    let req: NewSession = parse(&body(bytes)?)?;
    let info = blocking(move || s.engine.create_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn session_info(State(s): State<AppState>, Path(session): Path<String>) -> ApiResult<Response> {
    let info = blocking(move || s.engine.session_info(&session)).await?;
    Ok(Json(info).into_response())
}

async fn add_prompts(
    State(s): State<AppState>,
    Path(session): Path<String>,
    bytes: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let req: PromptRequest = parse(&body(bytes)?)?;
    let mask = blocking(move || s.engine.add_prompts(&session, &req)).await?;
    Ok(Json(mask).into_response())
}

async fn mask(State(s): State<AppState>, Path((session, index)): Path<(String, String)>) -> ApiResult<Response> {
    let index = path_index(&index)?;
    let mask = blocking(move || s.engine.mask(&session, index)).await?;
    Ok(Json(mask).into_response())
}

async fn propagate(
    State(s): State<AppState>,
    Path(session): Path<String>,
    bytes: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let req: PropagateRequest = parse(&body(bytes)?)?;
    let job = blocking(move || s.engine.propagate(&session, &req)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn refine(
    State(s): State<AppState>,
    Path(session): Path<String>,
    bytes: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let op: RefineOp = parse(&body(bytes)?)?;
    let mask = blocking(move || s.engine.refine(&session, &op)).await?;
    Ok(Json(mask).into_response())
}

async fn undo(State(s): State<AppState>, Path(session): Path<String>) -> ApiResult<Response> {
    let rev = blocking(move || s.engine.undo(&session)).await?;
    Ok(Json(rev).into_response())
}

async fn redo(State(s): State<AppState>, Path(session): Path<String>) -> ApiResult<Response> {
    let rev = blocking(move || s.engine.redo(&session)).await?;
    Ok(Json(rev).into_response())
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn labelmap_format(s: Option<&str>) -> ApiResult<LabelmapFormat> {
    match s {
        None | Some("nrrd") => Ok(LabelmapFormat::Nrrd),
        Some("nifti") | Some("nii") => Ok(LabelmapFormat::Nifti),
        Some("nifti-gz") | Some("nii.gz") => Ok(LabelmapFormat::NiftiGz),
        Some(other) => Err(ApiError::bad_request(format!("unknown labelmap format {other:?}"))),
    }
}

async fn labelmap(
    State(s): State<AppState>,
    Path(session): Path<String>,
    Query(q): Query<FormatQuery>,
) -> ApiResult<Response> {
    let format = labelmap_format(q.format.as_deref())?;
    let name = format!("{session}.{}", format.extension());
    let bytes = blocking(move || s.engine.export_labelmap(&session, format)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{name}\"")),
        ],
        bytes,
    )
        .into_response())
}

async fn job_status(State(s): State<AppState>, Path(job): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.engine.job(&job)?).into_response())
}

async fn cancel_job(State(s): State<AppState>, Path(job): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.engine.cancel_job(&job)?).into_response())
}

fn sse_event(e: &JobEvent) -> Event {
    let name = if e.is_terminal() { "finished" } else { "progress" };
    Event::default().event(name).json_data(e).expect("job events serialise")
}

/// Replays the job's events from the start, then follows it until the
/// terminal event.
fn event_stream(record: Arc<JobRecord>) -> impl Stream<Item = Result<Event, std::convert::Infallible>> {
    let init = (record, 0usize, VecDeque::<JobEvent>::new(), false);
    stream::unfold(init, |(record, mut cursor, mut pending, mut finished)| async move {
        loop {
            if let Some(e) = pending.pop_front() {
                finished |= e.is_terminal();
                let ev = sse_event(&e);
                return Some((Ok(ev), (record, cursor, pending, finished)));
            }
            if finished {
                return None;
            }
            let r = record.clone();
            let from = cursor;
            let batch = tokio::task::spawn_blocking(move || r.events_since(from, Duration::from_secs(10)))
                .await
                .unwrap_or_default();
            cursor += batch.len();
            pending.extend(batch);
        }
    })
}

async fn job_events(
    State(s): State<AppState>,
    Path(job): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, std::convert::Infallible>>>> {
    let record = s.engine.job_record(&job)?;
    Ok(Sse::new(event_stream(record)).keep_alive(KeepAlive::default()))
}
