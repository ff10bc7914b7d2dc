//! Model-agnostic VLM gateway.
//!
//! Builds the verdict prompt, enforces the global rate limit, sends the
//! request through a [`Transport`], parses the verdict and runs the bounded
//! retry queue. Rate-limited attempts come back as `SKIPPED` and are queued
//! without spending retry budget; real failures spend it.

pub mod prompt;
pub mod ratelimit;
pub mod retry;
pub mod transport;
pub mod verdict;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use prompt::{build_prompt, ChatRequest, PayloadMode, PromptParams};
pub use ratelimit::RateLimiter;
pub use retry::{RetryEntry, RetryQueue};
pub use transport::{DispatchError, HttpTransport, RawResponse, Transport};
pub use verdict::{parse_verdict, Category, Verdict};

use crate::prefilter::VlmCandidate;

/// How clip frames are rendered into the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadPolicy {
    /// Pixels when every frame has an image, text descriptions otherwise.
    #[default]
    Auto,
    Pixels,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub api_url: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub rate_limit_per_min: u32,
    pub retry_max: u32,
    pub retry_window_s: u64,
    pub queue_cap: usize,
    pub request_timeout_s: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub payload: PayloadPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            api_url: "http://127.0.0.1:8000".into(),
            model_name: "default".into(),
            api_key: None,
            rate_limit_per_min: 10,
            retry_max: 2,
            retry_window_s: 30,
            queue_cap: 100,
            request_timeout_s: 30.0,
            temperature: 0.1,
            max_tokens: 300,
            payload: PayloadPolicy::Auto,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rate_limit_per_min < 1 {
            return Err("rate_limit_per_min must be >= 1".into());
        }
        if self.queue_cap < 1 {
            return Err("queue_cap must be >= 1".into());
        }
        if self.request_timeout_s.is_nan() || self.request_timeout_s <= 0.0 {
            return Err("request_timeout_s must be positive".into());
        }
        Ok(())
    }

    fn retry_window_ms(&self) -> u64 {
        self.retry_window_s * 1000
    }
}

/// Terminal (or displacement) result for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeKind {
    Verdict(Verdict),
    /// Still queued when the retry window closed.
    Expired,
    /// Failed again with the retry budget spent.
    Exhausted(DispatchError),
    /// Pushed out of a full queue by a newer entry.
    Displaced,
}

impl OutcomeKind {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::Verdict(_) => "verdict",
            OutcomeKind::Expired => "expired",
            OutcomeKind::Exhausted(_) => "exhausted",
            OutcomeKind::Displaced => "displaced",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub candidate: VlmCandidate,
    pub attempts_used: u32,
    pub at_ms: u64,
    pub kind: OutcomeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayStats {
    /// Requests actually sent (permitted by the limiter).
    pub requests: u64,
    /// Candidates whose first dispatch came back SKIPPED.
    pub skips: u64,
    /// Requests sent from the retry queue.
    pub retries: u64,
    pub failures: BTreeMap<String, u64>,
    pub verdicts: BTreeMap<String, u64>,
    pub expired: u64,
    pub exhausted: u64,
    pub displaced: u64,
    pub total_latency_ms: u64,
    pub max_queue_len: usize,
}

pub struct Gateway {
    cfg: GatewayConfig,
    limiter: RateLimiter,
    queue: RetryQueue,
    transport: Box<dyn Transport>,
    stats: GatewayStats,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig, transport: Box<dyn Transport>) -> Self {
        Gateway {
            limiter: RateLimiter::new(cfg.rate_limit_per_min),
            queue: RetryQueue::new(cfg.queue_cap),
            cfg,
            transport,
            stats: GatewayStats::default(),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn queue(&self) -> &RetryQueue {
        &self.queue
    }

    pub fn limiter_mut(&mut self) -> &mut RateLimiter {
        &mut self.limiter
    }

    pub fn prompt_for(&self, candidate: &VlmCandidate) -> Result<ChatRequest, DispatchError> {
        let mode = match self.cfg.payload {
            PayloadPolicy::Pixels => PayloadMode::Pixels,
            PayloadPolicy::Text => PayloadMode::TextOnly,
            PayloadPolicy::Auto => {
                if candidate.clip.frames.iter().all(|f| f.image_ref.is_some()) {
                    PayloadMode::Pixels
                } else {
                    PayloadMode::TextOnly
                }
            }
        };
        let params = PromptParams {
            model: &self.cfg.model_name,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        build_prompt(&candidate.clip, &params, mode).map_err(|e| DispatchError::Prompt(e.to_string()))
    }

    /// One dispatch attempt. `Ok(SKIPPED)` when the limiter denies the call,
    /// in which case nothing is sent.
    pub fn dispatch(&mut self, candidate: &mut VlmCandidate, now_ms: u64) -> Result<Verdict, DispatchError> {
        if !self.limiter.try_acquire(now_ms) {
            return Ok(Verdict::skipped());
        }
        self.stats.requests += 1;
        candidate.attempts += 1;
        let result = self.send(candidate);
        if let Err(e) = &result {
            *self.stats.failures.entry(e.kind().to_string()).or_default() += 1;
        }
        result
    }

    fn send(&mut self, candidate: &VlmCandidate) -> Result<Verdict, DispatchError> {
        let body = self.prompt_for(candidate)?.to_json();
        let raw = self.transport.post_chat(&body, candidate.tag.as_deref())?;
        self.stats.total_latency_ms += raw.latency_ms;
        if !(200..300).contains(&raw.status) {
            return Err(DispatchError::HttpStatus(raw.status));
        }
        let content = transport::extract_content(&raw.body)?;
        let mut v = parse_verdict(&content).map_err(|e| DispatchError::VerdictParse(e.to_string()))?;
        v.latency_ms = raw.latency_ms;
        Ok(v)
    }

    fn finish(&mut self, candidate: VlmCandidate, attempts_used: u32, at_ms: u64, kind: OutcomeKind) -> Outcome {
        match &kind {
            OutcomeKind::Verdict(v) => *self.stats.verdicts.entry(v.category.to_string()).or_default() += 1,
            OutcomeKind::Expired => self.stats.expired += 1,
            OutcomeKind::Exhausted(_) => self.stats.exhausted += 1,
            OutcomeKind::Displaced => self.stats.displaced += 1,
        }
        Outcome { candidate, attempts_used, at_ms, kind }
    }

    fn enqueue(&mut self, candidate: VlmCandidate, attempts_used: u32, now_ms: u64, out: &mut Vec<Outcome>) {
        if let Some(old) = self.queue.enqueue(RetryEntry { candidate, enqueued_ms: now_ms, attempts_used }) {
            let o = self.finish(old.candidate, old.attempts_used, now_ms, OutcomeKind::Displaced);
            out.push(o);
        }
        self.stats.max_queue_len = self.stats.max_queue_len.max(self.queue.len());
    }

    /// First dispatch of a freshly fired candidate. Returns whatever became
    /// final right away: its verdict, or an entry displaced from a full queue.
    pub fn submit(&mut self, mut candidate: VlmCandidate, now_ms: u64) -> Vec<Outcome> {
        let mut out = Vec::new();
        match self.dispatch(&mut candidate, now_ms) {
            Ok(v) if v.category == Category::Skipped => {
                self.stats.skips += 1;
                self.enqueue(candidate, 0, now_ms, &mut out);
            }
            Ok(v) => out.push(self.finish(candidate, 0, now_ms, OutcomeKind::Verdict(v))),
            Err(e) => {
                if self.cfg.retry_max == 0 {
                    out.push(self.finish(candidate, 0, now_ms, OutcomeKind::Exhausted(e)));
                } else {
                    self.enqueue(candidate, 1, now_ms, &mut out);
                }
            }
        }
        out
    }

    /// Expires stale entries, then retries the rest in FIFO order while the
    /// rate budget lasts.
    pub fn retry_tick(&mut self, now_ms: u64) -> Vec<Outcome> {
        let mut out = Vec::new();
        for e in self.queue.expire(now_ms, self.cfg.retry_window_ms()) {
            let o = self.finish(e.candidate, e.attempts_used, now_ms, OutcomeKind::Expired);
            out.push(o);
        }
        let mut kept = std::collections::VecDeque::with_capacity(self.queue.len());
        let mut budget_left = true;
        while let Some(mut entry) = self.queue.pop_front() {
            if !budget_left {
                kept.push_back(entry);
                continue;
            }
            match self.dispatch(&mut entry.candidate, now_ms) {
                Ok(v) if v.category == Category::Skipped => {
                    budget_left = false;
                    kept.push_back(entry);
                }
                Ok(v) => {
                    self.stats.retries += 1;
                    let o = self.finish(entry.candidate, entry.attempts_used, now_ms, OutcomeKind::Verdict(v));
                    out.push(o);
                }
                Err(e) => {
                    self.stats.retries += 1;
                    if entry.attempts_used >= self.cfg.retry_max {
                        let o = self.finish(entry.candidate, entry.attempts_used, now_ms, OutcomeKind::Exhausted(e));
                        out.push(o);
                    } else {
                        entry.attempts_used += 1;
                        kept.push_back(entry);
                    }
                }
            }
        }
        self.queue.restore(kept);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::{ClipFrame, ClipSpec};
    use crate::event::BBox;
    use crate::prefilter::{SignalDetails, SignalReport};
    use crate::registry::TrackKey;
    use std::collections::VecDeque;
    use std::sync::{Arc, Mutex};

    /// Replays a fixed list of replies, then repeats the last one.
    struct Scripted {
        replies: VecDeque<Result<RawResponse, DispatchError>>,
        last: Result<RawResponse, DispatchError>,
        calls: Arc<Mutex<u32>>,
    }

    fn ok(text: &str) -> Result<RawResponse, DispatchError> {
        let body = serde_json::json!({"choices":[{"message":{"role":"assistant","content":text}}]});
        Ok(RawResponse { status: 200, body: body.to_string(), latency_ms: 5 })
    }

    fn status(code: u16) -> Result<RawResponse, DispatchError> {
        Ok(RawResponse { status: code, body: "{}".into(), latency_ms: 1 })
    }

    impl Transport for Scripted {
        fn post_chat(&mut self, _body: &str, _tag: Option<&str>) -> Result<RawResponse, DispatchError> {
            *self.calls.lock().unwrap() += 1;
            match self.replies.pop_front() {
                Some(r) => {
                    self.last = r.clone();
                    r
                }
                None => self.last.clone(),
            }
        }
    }

    fn gateway(replies: Vec<Result<RawResponse, DispatchError>>, cfg: GatewayConfig) -> (Gateway, Arc<Mutex<u32>>) {
        let calls = Arc::new(Mutex::new(0));
        let t = Scripted { replies: replies.into(), last: ok("NORMAL"), calls: calls.clone() };
        (Gateway::new(cfg, Box::new(t)), calls)
    }

    pub(crate) fn candidate(id: u64) -> VlmCandidate {
        let key = TrackKey::new("c1", id);
        VlmCandidate {
            id,
            key: key.clone(),
            created_ms: 0,
            signal_report: SignalReport {
                near_obj: true,
                hand_body: false,
                pickup: false,
                dwell_s: 3.0,
                details: SignalDetails {
                    nearest_object_px: Some(1.0),
                    near_threshold_px: 2.0,
                    wrist_to_torso_px: None,
                    hand_threshold_px: 1.0,
                    nearby_classes: vec![39],
                    pickup_active_until_ms: None,
                },
            },
            clip: ClipSpec {
                key,
                frames: vec![ClipFrame {
                    timestamp_ms: 0,
                    image_ref: None,
                    crop_rect: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                    keypoints: None,
                }],
                label_total: 1,
            },
            attempts: 0,
            tag: None,
        }
    }

    #[test]
    fn healthy_round_trip() {
        let (mut g, _) = gateway(vec![ok("CONFIRMED\nConfidence: 85\nbottle into pocket")], GatewayConfig::default());
        let out = g.submit(candidate(1), 0);
        assert_eq!(out.len(), 1);
        match &out[0].kind {
            OutcomeKind::Verdict(v) => {
                assert_eq!((v.category, v.confidence), (Category::Confirmed, 85));
                assert_eq!(v.description, "bottle into pocket");
                assert_eq!(v.latency_ms, 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exhausted_budget_skips_without_calling() {
        let cfg = GatewayConfig { rate_limit_per_min: 1, ..Default::default() };
        let (mut g, calls) = gateway(vec![], cfg);
        g.submit(candidate(1), 0);
        let mut c = candidate(2);
        let v = g.dispatch(&mut c, 10).unwrap();
        assert_eq!(v, Verdict::skipped());
        assert_eq!(*calls.lock().unwrap(), 1);
        assert_eq!(c.attempts, 0);
    }

    #[test]
    fn http_500_goes_to_queue() {
        let (mut g, _) = gateway(vec![status(500), ok("UNCERTAIN")], GatewayConfig::default());
        let out = g.submit(candidate(1), 0);
        assert!(out.is_empty());
        assert_eq!(g.queue().len(), 1);
        assert_eq!(g.queue().front().unwrap().attempts_used, 1);
        assert_eq!(g.stats().failures["http_status"], 1);
        let out = g.retry_tick(1000);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].attempts_used, 1);
        assert_eq!(out[0].candidate.attempts, 2);
        assert!(matches!(&out[0].kind, OutcomeKind::Verdict(v) if v.category == Category::Uncertain));
    }

    #[test]
    fn two_failures_then_success_in_window() {
        // Enqueued by a rate-limit skip at t=0; retries fail at 5 s and 12 s,
        // and the third attempt at 20 s succeeds.
        let cfg = GatewayConfig { rate_limit_per_min: 1, ..Default::default() };
        let (mut g, _) = gateway(vec![ok("NORMAL"), status(500), status(500), ok("CONFIRMED\nConfidence: 90")], cfg);
        g.submit(candidate(1), 0);
        let out = g.submit(candidate(2), 0);
        assert!(out.is_empty());
        assert_eq!(g.stats().skips, 1);
        // free the budget
        *g.limiter_mut() = RateLimiter::new(10);
        assert!(g.retry_tick(5_000).is_empty());
        assert!(g.retry_tick(12_000).is_empty());
        assert_eq!(g.queue().front().unwrap().attempts_used, 2);
        let out = g.retry_tick(20_000);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].attempts_used, 2);
        assert_eq!(out[0].candidate.attempts, 3);
        assert!(matches!(&out[0].kind, OutcomeKind::Verdict(v) if v.category == Category::Confirmed));
    }

    #[test]
    fn third_failure_exhausts() {
        let (mut g, _) = gateway(vec![status(500), status(503), status(500)], GatewayConfig::default());
        g.submit(candidate(1), 0);
        assert!(g.retry_tick(1000).is_empty());
        let out = g.retry_tick(2000);
        assert!(matches!(out[0].kind, OutcomeKind::Exhausted(DispatchError::HttpStatus(500))));
        assert_eq!(out[0].candidate.attempts, 3);
        assert!(g.queue().is_empty());
    }

    #[test]
    fn rate_limited_retry_keeps_budget_and_expires() {
        let cfg = GatewayConfig { rate_limit_per_min: 1, ..Default::default() };
        let (mut g, _) = gateway(vec![ok("NORMAL")], cfg);
        g.submit(candidate(1), 0);
        g.submit(candidate(2), 0);
        for t in 1..=30 {
            assert!(g.retry_tick(t * 1000).is_empty());
            assert_eq!(g.queue().front().unwrap().attempts_used, 0);
        }
        let out = g.retry_tick(31_000);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, OutcomeKind::Expired);
    }

    #[test]
    fn full_queue_displaces_oldest() {
        let cfg = GatewayConfig { rate_limit_per_min: 1, ..Default::default() };
        let (mut g, _) = gateway(vec![ok("NORMAL")], cfg);
        g.submit(candidate(0), 0);
        let mut displaced = Vec::new();
        for i in 1..=101 {
            displaced.extend(g.submit(candidate(i), 0));
        }
        assert_eq!(g.queue().len(), 100);
        assert_eq!(displaced.len(), 1);
        assert_eq!(displaced[0].candidate.id, 1);
        assert_eq!(displaced[0].kind, OutcomeKind::Displaced);
        assert_eq!(g.stats().displaced, 1);
    }

    #[test]
    fn parse_failure_routes_to_retry() {
        let (mut g, _) = gateway(vec![ok("no idea"), ok("NORMAL\nConfidence: 5")], GatewayConfig::default());
        assert!(g.submit(candidate(1), 0).is_empty());
        assert_eq!(g.stats().failures["verdict_parse"], 1);
        let out = g.retry_tick(1000);
        assert!(matches!(&out[0].kind, OutcomeKind::Verdict(v) if v.confidence == 5));
    }

    #[test]
    fn malformed_body_routes_to_retry() {
        let bad = Ok(RawResponse { status: 200, body: "not json".into(), latency_ms: 0 });
        let (mut g, _) = gateway(vec![bad], GatewayConfig::default());
        assert!(g.submit(candidate(1), 0).is_empty());
        assert_eq!(g.stats().failures["malformed_response"], 1);
    }
}
