//! Scriptable stand-in for an OpenAI-compatible VLM server.
//!
//! The same [`MockEngine`] backs both the in-process [`ScriptedTransport`]
//! (hermetic, virtual latency) and the HTTP server from [`serve_mock`].

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::transport::{DispatchError, RawResponse, Transport, CHAT_COMPLETIONS_PATH, TAG_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    #[serde(rename = "http_500")]
    Http500,
    #[serde(rename = "http_429")]
    Http429,
    Timeout,
    Malformed,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// `"default"` (or `"*"`) matches everything; any other value must equal
    /// the request's scenario tag.
    pub when: String,
    #[serde(default)]
    pub respond: String,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub fault: Fault,
    /// Share of matching requests this rule claims. Probabilities of
    /// consecutive matching rules stack, so `0.3, 0.1, default` yields a 30%
    /// / 10% / 60% split.
    #[serde(default = "one")]
    pub probability: f64,
    /// Stop matching after this many uses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

impl MockRule {
    pub fn respond(when: &str, text: &str) -> Self {
        MockRule {
            when: when.into(),
            respond: text.into(),
            latency_ms: 0,
            fault: Fault::None,
            probability: 1.0,
            times: None,
        }
    }

    pub fn fault(when: &str, fault: Fault, probability: f64) -> Self {
        MockRule { fault, probability, ..MockRule::respond(when, "") }
    }

    fn is_default(&self) -> bool {
        self.when == "default" || self.when == "*"
    }

    fn matches(&self, tag: Option<&str>) -> bool {
        self.is_default() || tag == Some(self.when.as_str())
    }
}

fn default_hang() -> u64 {
    35_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    /// How long the HTTP server stalls on a `timeout` fault.
    #[serde(default = "default_hang")]
    pub timeout_hang_ms: u64,
    pub rules: Vec<MockRule>,
}

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("mock script needs a default rule")]
    NoDefault,
    #[error("rule {0}: probability must lie in [0,1]")]
    Probability(usize),
    #[error("reading mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing mock script: {0}")]
    Json(#[from] serde_json::Error),
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockScript { seed: 0, timeout_hang_ms: default_hang(), rules }
    }

    pub fn validate(&self) -> Result<(), MockScriptError> {
        for (i, r) in self.rules.iter().enumerate() {
            if !(0.0..=1.0).contains(&r.probability) {
                return Err(MockScriptError::Probability(i));
            }
        }
        if !self.rules.iter().any(MockRule::is_default) {
            return Err(MockScriptError::NoDefault);
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MockScriptError> {
        let s: MockScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, MockScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub index: u64,
    pub tag: Option<String>,
    pub rule: usize,
    pub fault: Fault,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockReply {
    pub status: u16,
    pub body: String,
    pub latency_ms: u64,
    pub hang: bool,
}

/// Chat-completions response body carrying `content`.
pub fn completion_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "finish_reason": "stop",
                     "message": {"role": "assistant", "content": content}}],
    })
    .to_string()
}

// SplitMix64 over (seed, request index): reproducible regardless of how
// requests interleave across threads.
fn unit(seed: u64, index: u64) -> f64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug)]
pub struct MockEngine {
    script: MockScript,
    uses: Vec<u32>,
    recorded: Vec<RecordedRequest>,
}

impl MockEngine {
    pub fn new(script: MockScript) -> Self {
        let uses = vec![0; script.rules.len()];
        MockEngine { script, uses, recorded: Vec::new() }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn recorded(&self) -> &[RecordedRequest] {
        &self.recorded
    }

    pub fn request_count(&self) -> usize {
        self.recorded.len()
    }

    fn select(&self, tag: Option<&str>, u: f64) -> usize {
        let mut cum = 0.0;
        for (i, r) in self.script.rules.iter().enumerate() {
            if !r.matches(tag) || r.times.is_some_and(|n| self.uses[i] >= n) {
                continue;
            }
            cum += r.probability;
            if u < cum {
                return i;
            }
        }
        self.script
            .rules
            .iter()
            .rposition(MockRule::is_default)
            .expect("validated script has a default rule")
    }

    /// Picks a rule for one request, records it and renders the reply.
    pub fn respond(&mut self, tag: Option<&str>, body: &str) -> MockReply {
        let index = self.recorded.len() as u64;
        let i = self.select(tag, unit(self.script.seed, index));
        self.uses[i] += 1;
        let rule = &self.script.rules[i];
        self.recorded.push(RecordedRequest {
            index,
            tag: tag.map(str::to_string),
            rule: i,
            fault: rule.fault,
            body: body.to_string(),
        });
        let (status, body, hang) = match rule.fault {
            Fault::None => (200, completion_body(&rule.respond), false),
            Fault::Http500 => (500, r#"{"error":{"message":"injected fault"}}"#.into(), false),
            Fault::Http429 => (429, r#"{"error":{"message":"rate limited"}}"#.into(), false),
            Fault::Timeout => (504, String::new(), true),
            Fault::Malformed => (200, "not json".into(), false),
        };
        MockReply { status, body, latency_ms: rule.latency_ms, hang }
    }
}

pub type SharedEngine = Arc<Mutex<MockEngine>>;

pub fn shared(script: MockScript) -> SharedEngine {
    Arc::new(Mutex::new(MockEngine::new(script)))
}

/// In-process transport: no sockets, latency is reported but not slept.
pub struct ScriptedTransport {
    engine: SharedEngine,
    timeout_ms: u64,
}

impl ScriptedTransport {
    pub fn new(engine: SharedEngine, timeout_ms: u64) -> Self {
        ScriptedTransport { engine, timeout_ms }
    }
}

impl Transport for ScriptedTransport {
    fn post_chat(&mut self, body: &str, tag: Option<&str>) -> Result<RawResponse, DispatchError> {
        let reply = self.engine.lock().expect("mock engine poisoned").respond(tag, body);
        if reply.hang || reply.latency_ms > self.timeout_ms {
            return Err(DispatchError::Timeout);
        }
        Ok(RawResponse { status: reply.status, body: reply.body, latency_ms: reply.latency_ms })
    }
}

async fn chat(State(engine): State<SharedEngine>, headers: HeaderMap, body: String) -> Response {
    let tag = headers.get(TAG_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    let (reply, hang_ms) = {
        let mut e = engine.lock().expect("mock engine poisoned");
        let hang = e.script().timeout_hang_ms;
        (e.respond(tag.as_deref(), &body), hang)
    };
    let wait = if reply.hang { hang_ms } else { reply.latency_ms };
    if wait > 0 {
        tokio::time::sleep(Duration::from_millis(wait)).await;
    }
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [("content-type", "application/json")], reply.body).into_response()
}

async fn recorded(State(engine): State<SharedEngine>) -> Json<Vec<RecordedRequest>> {
    Json(engine.lock().expect("mock engine poisoned").recorded().to_vec())
}

pub fn mock_router(engine: SharedEngine) -> Router {
    Router::new()
        .route(CHAT_COMPLETIONS_PATH, post(chat))
        .route("/__mock/requests", get(recorded))
        .with_state(engine)
}

/// A mock server running on its own runtime thread. Dropping it shuts it down.
pub struct MockServer {
    pub addr: SocketAddr,
    pub engine: SharedEngine,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.engine.lock().expect("mock engine poisoned").request_count()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 for an ephemeral port) and serves the script.
pub fn serve_mock(script: MockScript, addr: SocketAddr) -> std::io::Result<MockServer> {
    script.validate().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    let engine = shared(script);
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let router = mock_router(engine.clone());
    let thread = std::thread::Builder::new().name("mock-vlm".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("mock runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
            let _ = axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        // Stalled timeout handlers must not hold the thread open.
        rt.shutdown_timeout(Duration::from_millis(100));
    })?;
    Ok(MockServer { addr: local, engine, shutdown: Some(tx), thread: Some(thread) })
}
