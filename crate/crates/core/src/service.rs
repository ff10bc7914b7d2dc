//! HTTP ingest and review API with a server-sent event stream.
//!
//! Routes:
//! - `POST /api/ingest` FrameEvent NDJSON, answered 202
//! - `GET /api/alerts?since_ms=`, `GET /api/alerts/{id}`
//! - `POST /api/alerts/{id}/review` `{"decision": "confirmed"|"dismissed", "note": ...}`
//! - `GET /api/alerts/{id}/snapshots/{i}` obfuscated JPEG
//! - `GET /api/stats`
//! - `GET /api/stream` events `alert-created`, `alert-reviewed`, `stats-tick`

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use crate::alerts::{AlertRecord, ReviewError, ReviewStatus};
use crate::event::parse_frame_event;
use crate::pipeline::{Pipeline, PipelineError};

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", content = "data", rename_all = "kebab-case")]
pub enum StreamEvent {
    AlertCreated(AlertRecord),
    AlertReviewed(AlertRecord),
    StatsTick(crate::pipeline::RunStats),
}

impl StreamEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StreamEvent::AlertCreated(_) => "alert-created",
            StreamEvent::AlertReviewed(_) => "alert-reviewed",
            StreamEvent::StatsTick(_) => "stats-tick",
        }
    }

    fn data(&self) -> String {
        match self {
            StreamEvent::AlertCreated(a) | StreamEvent::AlertReviewed(a) => serde_json::to_string(a),
            StreamEvent::StatsTick(s) => serde_json::to_string(s),
        }
        .expect("stream payload serializes")
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub stats_interval: Duration,
    /// When no frames arrive for a tick, advance the virtual clock by the
    /// wall time elapsed so queued retries still drain.
    pub idle_advance: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { stats_interval: Duration::from_secs(5), idle_advance: true }
    }
}

struct Shared {
    pipeline: Mutex<Pipeline>,
    last_ingest: Mutex<Instant>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
    events: broadcast::Sender<StreamEvent>,
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Self {
        let (events, _) = broadcast::channel(1024);
        AppState {
            shared: Arc::new(Shared { pipeline: Mutex::new(pipeline), last_ingest: Mutex::new(Instant::now()) }),
            events,
        }
    }

    pub fn pipeline(&self) -> MutexGuard<'_, Pipeline> {
        self.shared.pipeline.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    fn publish(&self, e: StreamEvent) {
        // No subscribers is fine.
        let _ = self.events.send(e);
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct IngestResponse {
    pub accepted: usize,
    pub rejected: usize,
    pub alerts_created: usize,
    pub errors: Vec<LineError>,
}

fn error_json(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn ingest(State(state): State<AppState>, body: String) -> Response {
    let st = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let mut resp = IngestResponse { accepted: 0, rejected: 0, alerts_created: 0, errors: Vec::new() };
        let mut created = Vec::new();
        {
            let mut p = st.pipeline();
            for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let outcome = parse_frame_event(line)
                    .map_err(|e| e.to_string())
                    .and_then(|ev| p.ingest(&ev).map_err(|e: PipelineError| e.to_string()));
                match outcome {
                    Ok(out) => {
                        resp.accepted += 1;
                        created.extend(out.alerts);
                    }
                    Err(message) => {
                        resp.rejected += 1;
                        resp.errors.push(LineError { line: i + 1, message });
                    }
                }
            }
        }
        *st.shared.last_ingest.lock().unwrap_or_else(|p| p.into_inner()) = Instant::now();
        resp.alerts_created = created.len();
        for a in created {
            st.publish(StreamEvent::AlertCreated(a));
        }
        resp
    })
    .await;
    match result {
        Ok(resp) if resp.accepted == 0 && resp.rejected > 0 => (StatusCode::BAD_REQUEST, Json(resp)).into_response(),
        Ok(resp) => (StatusCode::ACCEPTED, Json(resp)).into_response(),
        Err(e) => error_json(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    since_ms: Option<u64>,
}

async fn list_alerts(State(state): State<AppState>, Query(q): Query<SinceQuery>) -> Json<Vec<AlertRecord>> {
    Json(state.pipeline().store().since(q.since_ms.unwrap_or(0)))
}

async fn get_alert(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.pipeline().store().get(&id) {
        Some(a) => Json(a.clone()).into_response(),
        None => error_json(StatusCode::NOT_FOUND, format!("alert {id} not found")),
    }
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    decision: String,
    #[serde(default)]
    note: Option<String>,
}

async fn review_alert(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<ReviewBody>) -> Response {
    let decision = match body.decision.parse::<ReviewStatus>() {
        Ok(d @ (ReviewStatus::Confirmed | ReviewStatus::Dismissed)) => d,
        _ => return error_json(StatusCode::BAD_REQUEST, "decision must be confirmed or dismissed"),
    };
    let result = {
        let mut p = state.pipeline();
        let now = p.clock_ms();
        p.store_mut().review(&id, decision, body.note, now)
    };
    match result {
        Ok(rec) => {
            state.publish(StreamEvent::AlertReviewed(rec.clone()));
            Json(rec).into_response()
        }
        Err(e @ ReviewError::NotFound(_)) => error_json(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ ReviewError::AlreadyReviewed(_)) => error_json(StatusCode::CONFLICT, e.to_string()),
        Err(e @ ReviewError::InvalidDecision) => error_json(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e @ ReviewError::Store(_)) => error_json(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn snapshot(State(state): State<AppState>, Path((id, index)): Path<(String, usize)>) -> Response {
    let path = {
        let p = state.pipeline();
        let store = p.store();
        store
            .get(&id)
            .and_then(|a| a.snapshots.get(index).cloned())
            .and_then(|name| store.snapshot_path(&name))
    };
    let Some(path) = path else {
        return error_json(StatusCode::NOT_FOUND, "no such snapshot");
    };
    match std::fs::read(&path) {
        Ok(bytes) => ([("content-type", "image/jpeg")], bytes).into_response(),
        Err(_) => error_json(StatusCode::NOT_FOUND, "snapshot purged"),
    }
}

async fn stats(State(state): State<AppState>) -> Response {
    let report = state.pipeline().report(None);
    Json(report).into_response()
}

async fn stream(State(state): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let events = BroadcastStream::new(state.subscribe())
        .filter_map(|e| e.ok())
        .map(|e| Ok(Event::default().event(e.name()).data(e.data())));
    Sse::new(events).keep_alive(KeepAlive::default())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/ingest", post(ingest))
        .route("/api/alerts", get(list_alerts))
        .route("/api/alerts/{id}", get(get_alert))
        .route("/api/alerts/{id}/review", post(review_alert))
        .route("/api/alerts/{id}/snapshots/{index}", get(snapshot))
        .route("/api/stats", get(stats))
        .route("/api/stream", get(stream))
        .with_state(state)
}

/// Periodic work: stats ticks, idle clock advance and retention cleanup.
async fn background(state: AppState, opts: ServeOptions) {
    let tick = Duration::from_millis(state.pipeline().config().pipeline.retry_tick_ms);
    let mut interval = tokio::time::interval(tick);
    let mut last_stats = Instant::now();
    let mut last_tick = Instant::now();
    loop {
        interval.tick().await;
        let st = state.clone();
        let idle = opts.idle_advance;
        let elapsed = last_tick.elapsed();
        last_tick = Instant::now();
        let created = tokio::task::spawn_blocking(move || {
            let quiet = st.shared.last_ingest.lock().unwrap_or_else(|p| p.into_inner()).elapsed() >= tick;
            let mut p = st.pipeline();
            let mut alerts = Vec::new();
            if idle && quiet && !p.gateway().queue().is_empty() {
                let target = p.clock_ms() + elapsed.as_millis() as u64;
                match p.advance_to(target) {
                    Ok(out) => alerts = out.alerts,
                    Err(e) => tracing::error!(error = %e, "idle advance failed"),
                }
            }
            if let Err(e) = p.cleanup_retention() {
                tracing::error!(error = %e, "retention cleanup failed");
            }
            alerts
        })
        .await
        .unwrap_or_default();
        for a in created {
            state.publish(StreamEvent::AlertCreated(a));
        }
        if last_stats.elapsed() >= opts.stats_interval {
            last_stats = Instant::now();
            let s = state.pipeline().stats();
            state.publish(StreamEvent::StatsTick(s));
        }
    }
}

pub async fn serve_with(
    listener: tokio::net::TcpListener,
    state: AppState,
    opts: ServeOptions,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let bg = tokio::spawn(background(state.clone(), opts));
    // Open event streams never end on their own, so shutdown does not wait
    // for connections to drain.
    let r = tokio::select! {
        r = axum::serve(listener, router(state)) => r,
        _ = shutdown => Ok(()),
    };
    bg.abort();
    r
}

/// A service on its own runtime thread, for embedding and tests.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn_service(pipeline: Pipeline, addr: SocketAddr, opts: ServeOptions) -> std::io::Result<ServiceHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let state = AppState::new(pipeline);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let st = state.clone();
    let thread = std::thread::Builder::new().name("paza-service".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("service runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            let shutdown = async {
                let _ = rx.await;
            };
            if let Err(e) = serve_with(listener, st, opts, shutdown).await {
                tracing::error!(error = %e, "service stopped");
            }
        });
        rt.shutdown_timeout(Duration::from_millis(200));
    })?;
    Ok(ServiceHandle { addr: local, state, shutdown: Some(tx), thread: Some(thread) })
}
