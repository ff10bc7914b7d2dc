//! Request transports: real HTTP and anything that can stand in for it.

use std::time::{Duration, Instant};

use thiserror::Error;

/// Header carrying a scenario tag. Only the replay harness sets it.
pub const TAG_HEADER: &str = "x-paza-scenario-tag";

pub const CHAT_COMPLETIONS_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
    pub latency_ms: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DispatchError {
    #[error("request timed out")]
    Timeout,
    #[error("upstream returned HTTP {0}")]
    HttpStatus(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("unparseable verdict: {0}")]
    VerdictParse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("prompt error: {0}")]
    Prompt(String),
}

impl DispatchError {
    /// Short stable label for stats.
    pub fn kind(&self) -> &'static str {
        match self {
            DispatchError::Timeout => "timeout",
            DispatchError::HttpStatus(_) => "http_status",
            DispatchError::MalformedResponse(_) => "malformed_response",
            DispatchError::VerdictParse(_) => "verdict_parse",
            DispatchError::Transport(_) => "transport",
            DispatchError::Prompt(_) => "prompt",
        }
    }
}

/// Sends one serialized chat request and returns the raw reply.
pub trait Transport: Send {
    fn post_chat(&mut self, body: &str, tag: Option<&str>) -> Result<RawResponse, DispatchError>;
}

/// Blocking HTTP client for any OpenAI-compatible server.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(api_url: &str, timeout: Duration, api_key: Option<String>) -> Result<Self, DispatchError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| DispatchError::Transport(e.to_string()))?;
        Ok(HttpTransport { client, url: endpoint_url(api_url), api_key })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// `api_url` with the chat-completions path appended.
pub fn endpoint_url(api_url: &str) -> String {
    format!("{}{}", api_url.trim_end_matches('/'), CHAT_COMPLETIONS_PATH)
}

impl Transport for HttpTransport {
    fn post_chat(&mut self, body: &str, tag: Option<&str>) -> Result<RawResponse, DispatchError> {
        let mut req = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        if let Some(tag) = tag {
            req = req.header(TAG_HEADER, tag);
        }
        let started = Instant::now();
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                DispatchError::Timeout
            } else {
                DispatchError::Transport(e.to_string())
            }
        };
        let resp = req.send().map_err(map_err)?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(map_err)?;
        Ok(RawResponse { status, body, latency_ms: started.elapsed().as_millis() as u64 })
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions body.
pub fn extract_content(body: &str) -> Result<String, DispatchError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| DispatchError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| DispatchError::MalformedResponse("missing choices[0].message.content".into()))
}
