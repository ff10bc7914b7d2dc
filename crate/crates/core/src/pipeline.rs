//! The full per-frame path: registry, pre-filter, clip, gateway, alerts.
//!
//! Time is virtual. Trigger decisions use each event's own timestamp; the
//! rate limiter, retry queue and track cleanup use the newest timestamp seen
//! across all cameras. Retry ticks fire on every whole tick boundary the
//! clock crosses, so replays are deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::{AlertRecord, AlertStore, StoreError};
use crate::config::Config;
use crate::event::{validate_event, FrameEvent, ParseError};
use crate::gateway::{Category, Gateway, GatewayStats, Outcome, OutcomeKind, Transport};
use crate::prefilter::{evaluate_trigger, TriggerDecision, VlmCandidate};
use crate::registry::{Registry, RegistryError, TrackKey};
use crate::sim::eval::{trigger_eval, TriggerEval};
use crate::sim::trace::GroundTruth;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid event: {0}")]
    Invalid(#[from] ParseError),
    #[error(transparent)]
    Stale(#[from] RegistryError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Invalid(_) => "invalid_event",
            PipelineError::Stale(_) => "stale_event",
            PipelineError::Store(_) => "store_write",
        }
    }
}

/// One pre-filter Fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireRecord {
    pub candidate_id: u64,
    pub key: TrackKey,
    pub t_ms: u64,
    pub dwell_s: f64,
    pub near_obj: bool,
    pub hand_body: bool,
    pub pickup: bool,
}

/// How a candidate ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub candidate_id: u64,
    pub key: TrackKey,
    pub created_ms: u64,
    pub at_ms: u64,
    pub outcome: String,
    pub attempts_used: u32,
    pub requests: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub frames_processed: u64,
    pub persons_tracked: u64,
    pub triggers_fired: u64,
    /// Requests sent while frames were being ingested.
    pub vlm_calls: u64,
    /// Requests sent while draining the retry queue after the input ended.
    pub drain_vlm_calls: u64,
    pub skips: u64,
    pub retries: u64,
    pub expired: u64,
    pub exhausted: u64,
    pub displaced: u64,
    pub verdicts_by_category: BTreeMap<String, u64>,
    pub alerts_by_category: BTreeMap<String, u64>,
    /// `frames_processed / max(vlm_calls, 1)`.
    pub reduction_factor: f64,
    pub errors: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub stats: RunStats,
    pub gateway: GatewayStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trigger_eval: Option<TriggerEval>,
    pub queue_len: usize,
    pub virtual_duration_ms: u64,
    /// Omitted unless requested, so that reports stay byte-stable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// What one ingest call produced, for live subscribers.
#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub fires: Vec<FireRecord>,
    pub alerts: Vec<AlertRecord>,
    pub outcomes: Vec<OutcomeRecord>,
}

impl IngestOutput {
    fn extend(&mut self, other: IngestOutput) {
        self.fires.extend(other.fires);
        self.alerts.extend(other.alerts);
        self.outcomes.extend(other.outcomes);
    }
}

pub struct Pipeline {
    cfg: Config,
    registry: Registry,
    gateway: Gateway,
    store: AlertStore,
    fires: Vec<FireRecord>,
    outcomes: Vec<OutcomeRecord>,
    tags: BTreeMap<TrackKey, String>,
    next_candidate: u64,
    first_ms: Option<u64>,
    clock_ms: u64,
    last_tick_ms: u64,
    frames: u64,
    drain_requests: u64,
    draining: bool,
    errors: BTreeMap<String, u64>,
}

impl Pipeline {
    pub fn new(cfg: Config, transport: Box<dyn Transport>, store: AlertStore) -> Self {
        Pipeline {
            registry: Registry::new(cfg.registry()),
            gateway: Gateway::new(cfg.gateway.clone(), transport),
            store,
            fires: Vec::new(),
            outcomes: Vec::new(),
            tags: BTreeMap::new(),
            next_candidate: 1,
            first_ms: None,
            clock_ms: 0,
            last_tick_ms: 0,
            frames: 0,
            drain_requests: 0,
            draining: false,
            errors: BTreeMap::new(),
            cfg,
        }
    }

    /// Scenario tags forwarded with each track's requests. Test doubles only.
    pub fn set_tags(&mut self, tags: BTreeMap<TrackKey, String>) {
        self.tags = tags;
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn store(&self) -> &AlertStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut AlertStore {
        &mut self.store
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn fires(&self) -> &[FireRecord] {
        &self.fires
    }

    pub fn outcomes(&self) -> &[OutcomeRecord] {
        &self.outcomes
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    fn count_error(&mut self, kind: &str) {
        *self.errors.entry(kind.to_string()).or_default() += 1;
    }

    /// Processes one frame. Rejected frames are counted and reported; the
    /// pipeline stays usable.
    pub fn ingest(&mut self, event: &FrameEvent) -> Result<IngestOutput, PipelineError> {
        let r = self.ingest_inner(event);
        if let Err(e) = &r {
            self.count_error(e.kind());
        }
        r
    }

    fn ingest_inner(&mut self, event: &FrameEvent) -> Result<IngestOutput, PipelineError> {
        validate_event(event)?;
        let mut out = self.advance_to(event.timestamp_ms)?;
        let observations = self.registry.ingest(event)?;
        self.frames += 1;
        let now = self.clock_ms;
        for obs in observations {
            let state = self.registry.get_mut(&obs.key).expect("observed track exists");
            let decision = evaluate_trigger(state, &obs, &event.detections, &self.cfg.prefilter);
            let TriggerDecision::Fire(report) = decision else { continue };
            let clip = match state.buffer.sample_clip(
                self.cfg.prefilter.clip_frames_k,
                f64::from(self.cfg.pipeline.frame_width),
                f64::from(self.cfg.pipeline.frame_height),
            ) {
                Ok(c) => c,
                Err(e) => {
                    tracing::warn!(key = %obs.key, error = %e, "clip unavailable");
                    self.count_error("clip");
                    continue;
                }
            };
            let id = self.next_candidate;
            self.next_candidate += 1;
            let fire = FireRecord {
                candidate_id: id,
                key: obs.key.clone(),
                t_ms: obs.timestamp_ms,
                dwell_s: report.dwell_s,
                near_obj: report.near_obj,
                hand_body: report.hand_body,
                pickup: report.pickup,
            };
            self.fires.push(fire.clone());
            out.fires.push(fire);
            let candidate = VlmCandidate {
                id,
                key: obs.key.clone(),
                created_ms: obs.timestamp_ms,
                signal_report: report,
                clip,
                attempts: 0,
                tag: self.tags.get(&obs.key).cloned(),
            };
            let outcomes = self.gateway.submit(candidate, now);
            out.extend(self.settle(outcomes)?);
        }
        self.registry.gc_expired(now);
        Ok(out)
    }

    /// Moves the shared clock forward, running every retry tick crossed.
    pub fn advance_to(&mut self, t_ms: u64) -> Result<IngestOutput, PipelineError> {
        let tick = self.cfg.pipeline.retry_tick_ms;
        if self.first_ms.is_none() {
            self.first_ms = Some(t_ms);
            self.clock_ms = t_ms;
            self.last_tick_ms = t_ms / tick * tick;
        }
        let mut out = IngestOutput::default();
        if t_ms <= self.clock_ms {
            return Ok(out);
        }
        while self.last_tick_ms + tick <= t_ms {
            self.last_tick_ms += tick;
            self.clock_ms = self.last_tick_ms;
            let outcomes = self.gateway.retry_tick(self.last_tick_ms);
            out.extend(self.settle(outcomes)?);
        }
        self.clock_ms = t_ms;
        Ok(out)
    }

    fn settle(&mut self, outcomes: Vec<Outcome>) -> Result<IngestOutput, PipelineError> {
        let mut out = IngestOutput::default();
        for o in outcomes {
            let mut rec = OutcomeRecord {
                candidate_id: o.candidate.id,
                key: o.candidate.key.clone(),
                created_ms: o.candidate.created_ms,
                at_ms: o.at_ms,
                outcome: o.kind.label().to_string(),
                attempts_used: o.attempts_used,
                requests: o.candidate.attempts,
                category: None,
                confidence: None,
                error: None,
                alert_id: None,
            };
            match &o.kind {
                OutcomeKind::Verdict(v) => {
                    rec.category = Some(v.category);
                    rec.confidence = Some(v.confidence);
                    if let Some(alert) = self.store.record_alert(v, &o.candidate, o.at_ms)? {
                        rec.alert_id = Some(alert.alert_id.clone());
                        out.alerts.push(alert);
                    }
                }
                OutcomeKind::Exhausted(e) => rec.error = Some(e.to_string()),
                OutcomeKind::Expired | OutcomeKind::Displaced => {}
            }
            self.outcomes.push(rec.clone());
            out.outcomes.push(rec);
        }
        Ok(out)
    }

    /// Keeps ticking after the input ends until the retry queue is empty.
    /// Every queued candidate is terminal once this returns.
    pub fn drain(&mut self) -> Result<IngestOutput, PipelineError> {
        let before = self.gateway.stats().requests;
        self.draining = true;
        let mut out = IngestOutput::default();
        let tick = self.cfg.pipeline.retry_tick_ms;
        while !self.gateway.queue().is_empty() {
            let next = self.last_tick_ms + tick;
            out.extend(self.advance_to(next)?);
        }
        self.drain_requests += self.gateway.stats().requests - before;
        Ok(out)
    }

    /// Purges alert snapshots past retention, measured on the virtual clock.
    pub fn cleanup_retention(&mut self) -> Result<usize, StoreError> {
        let h = self.cfg.alerts.retention_h;
        self.store.cleanup_retention(self.clock_ms, h)
    }

    pub fn stats(&self) -> RunStats {
        let g = self.gateway.stats();
        let vlm_calls = g.requests - self.drain_requests;
        RunStats {
            frames_processed: self.frames,
            persons_tracked: self.registry.created_total(),
            triggers_fired: self.fires.len() as u64,
            vlm_calls,
            drain_vlm_calls: self.drain_requests,
            skips: g.skips,
            retries: g.retries,
            expired: g.expired,
            exhausted: g.exhausted,
            displaced: g.displaced,
            verdicts_by_category: g.verdicts.clone(),
            alerts_by_category: self.store.counts_by_category(),
            reduction_factor: self.frames as f64 / vlm_calls.max(1) as f64,
            errors: self.errors.clone(),
        }
    }

    pub fn report(&self, truth: Option<&GroundTruth>) -> RunReport {
        RunReport {
            stats: self.stats(),
            gateway: self.gateway.stats().clone(),
            trigger_eval: truth.map(|t| trigger_eval(self.fires.iter().map(|f| &f.key), t)),
            queue_len: self.gateway.queue().len(),
            virtual_duration_ms: self.first_ms.map_or(0, |f| self.clock_ms - f),
            wall_clock_ms: None,
        }
    }
}

/// Scenario tags for the mock VLM: each simulated shopper's behavior.
pub fn behavior_tags(truth: &GroundTruth) -> BTreeMap<TrackKey, String> {
    truth.behaviors().into_iter().map(|(k, b)| (k, b.as_str().to_string())).collect()
}

/// Feeds a whole trace, drains the retry queue and applies retention.
/// Bad frames are counted in the report; only alert-store failures abort.
pub fn replay<'a, I>(p: &mut Pipeline, events: I, truth: Option<&GroundTruth>) -> Result<RunReport, PipelineError>
where
    I: IntoIterator<Item = &'a FrameEvent>,
{
    for e in events {
        match p.ingest(e) {
            Ok(_) => {}
            Err(PipelineError::Store(err)) => return Err(err.into()),
            Err(err) => tracing::warn!(camera = %e.camera_id, frame = e.frame_index, error = %err, "frame rejected"),
        }
    }
    p.drain()?;
    p.cleanup_retention()?;
    Ok(p.report(truth))
}
