//! Alert persistence, review and retention, plus the evaluation and cost
//! arithmetic used in reports.

pub mod cost;
pub mod metrics;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clip::ClipFrame;
use crate::gateway::prompt::load_rgb;
use crate::gateway::verdict::{Category, Verdict};
use crate::prefilter::VlmCandidate;
use crate::privacy::obfuscate_faces;
use crate::registry::TrackKey;

pub const CLIP_PRE_MS: i64 = 4_000;
pub const CLIP_POST_MS: i64 = 3_000;
pub const LOG_FILE: &str = "alerts.jsonl";
pub const SNAPSHOT_JPEG_QUALITY: u8 = 85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    #[default]
    Pending,
    Confirmed,
    Dismissed,
}

impl FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => Ok(ReviewStatus::Pending),
            "confirmed" => Ok(ReviewStatus::Confirmed),
            "dismissed" => Ok(ReviewStatus::Dismissed),
            other => Err(format!("unknown review status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Review {
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub alert_id: String,
    pub key: TrackKey,
    pub candidate_id: u64,
    pub created_ms: u64,
    pub category: Category,
    pub confidence: u8,
    pub description: String,
    pub clip_frames: Vec<ClipFrame>,
    /// `[created_ms - 4000, created_ms + 3000]`; may start below zero early
    /// in a stream.
    pub clip_window: [i64; 2],
    pub review: Review,
    pub latency_ms: u64,
    /// Snapshot file names beside the log.
    #[serde(default)]
    pub snapshots: Vec<String>,
    #[serde(default)]
    pub snapshots_purged: bool,
}

pub fn clip_window(created_ms: u64) -> [i64; 2] {
    let t = created_ms as i64;
    [t - CLIP_PRE_MS, t + CLIP_POST_MS]
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("alert store write failed: {0}")]
    StoreWrite(#[source] std::io::Error),
    #[error("alert store read failed: {0}")]
    StoreRead(#[source] std::io::Error),
    #[error("alert log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReviewError {
    #[error("alert {0} not found")]
    NotFound(String),
    #[error("alert {0} already reviewed")]
    AlreadyReviewed(String),
    #[error("decision must be confirmed or dismissed")]
    InvalidDecision,
    #[error("{0}")]
    Store(String),
}

/// Append-only alert log with an in-memory index. Without a directory the
/// store lives in memory only.
#[derive(Debug)]
pub struct AlertStore {
    dir: Option<PathBuf>,
    log: Option<File>,
    alerts: BTreeMap<String, AlertRecord>,
    next_seq: u64,
    write_snapshots: bool,
}

fn seq_of(id: &str) -> Option<u64> {
    id.strip_prefix("alert-")?.parse().ok()
}

impl AlertStore {
    pub fn in_memory() -> Self {
        AlertStore { dir: None, log: None, alerts: BTreeMap::new(), next_seq: 1, write_snapshots: false }
    }

    /// Opens (or creates) `dir/alerts.jsonl` and rebuilds the index from it.
    /// Later lines for the same alert supersede earlier ones.
    pub fn open(dir: &Path, write_snapshots: bool) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(StoreError::StoreWrite)?;
        let path = dir.join(LOG_FILE);
        let mut alerts = BTreeMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(StoreError::StoreRead)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(StoreError::StoreRead)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AlertRecord = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt { line: i + 1, message: e.to_string() })?;
                alerts.insert(rec.alert_id.clone(), rec);
            }
        }
        let next_seq = alerts.keys().filter_map(|k| seq_of(k)).max().unwrap_or(0) + 1;
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(StoreError::StoreWrite)?;
        Ok(AlertStore { dir: Some(dir.to_path_buf()), log: Some(log), alerts, next_seq, write_snapshots })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alerts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&AlertRecord> {
        self.alerts.get(id)
    }

    /// Alerts in creation order.
    pub fn all(&self) -> impl Iterator<Item = &AlertRecord> {
        self.alerts.values()
    }

    /// Alerts created at or after `since_ms`.
    pub fn since(&self, since_ms: u64) -> Vec<AlertRecord> {
        self.alerts.values().filter(|a| a.created_ms >= since_ms).cloned().collect()
    }

    pub fn counts_by_category(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        for a in self.alerts.values() {
            *m.entry(a.category.to_string()).or_default() += 1;
        }
        m
    }

    fn append(&mut self, rec: &AlertRecord) -> Result<(), StoreError> {
        if let Some(log) = self.log.as_mut() {
            let mut line = serde_json::to_string(rec).expect("alert serializes");
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(StoreError::StoreWrite)?;
            log.flush().map_err(StoreError::StoreWrite)?;
        }
        Ok(())
    }

    /// Persists an alert for CONFIRMED or UNCERTAIN verdicts; NORMAL and
    /// SKIPPED produce nothing.
    pub fn record_alert(
        &mut self,
        verdict: &Verdict,
        candidate: &VlmCandidate,
        now_ms: u64,
    ) -> Result<Option<AlertRecord>, StoreError> {
        if !verdict.category.alerts() {
            return Ok(None);
        }
        let alert_id = format!("alert-{:06}", self.next_seq);
        let snapshots = self.write_snapshots(&alert_id, &candidate.clip.frames);
        let rec = AlertRecord {
            alert_id: alert_id.clone(),
            key: candidate.key.clone(),
            candidate_id: candidate.id,
            created_ms: now_ms,
            category: verdict.category,
            confidence: verdict.confidence,
            description: verdict.description.clone(),
            clip_frames: candidate.clip.frames.clone(),
            clip_window: clip_window(now_ms),
            review: Review::default(),
            latency_ms: verdict.latency_ms,
            snapshots,
            snapshots_purged: false,
        };
        self.append(&rec)?;
        self.next_seq += 1;
        self.alerts.insert(alert_id, rec.clone());
        Ok(Some(rec))
    }

    // Face-obfuscated full frames. Frames without readable pixels are skipped.
    fn write_snapshots(&self, alert_id: &str, frames: &[ClipFrame]) -> Vec<String> {
        let Some(dir) = self.dir.as_ref().filter(|_| self.write_snapshots) else {
            return Vec::new();
        };
        let mut names = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            let Some(r) = f.image_ref.as_deref() else { continue };
            let mut img = match load_rgb(r) {
                Ok(img) => img,
                Err(e) => {
                    tracing::warn!(alert_id, error = %e, "snapshot skipped");
                    continue;
                }
            };
            if let Some(k) = f.keypoints.as_deref() {
                obfuscate_faces(&mut img, k, crate::prefilter::PrefilterConfig::default().keypoint_conf_gate);
            }
            let name = format!("{alert_id}_{i}.jpg");
            let written = File::create(dir.join(&name)).map_err(image::ImageError::IoError).and_then(|file| {
                JpegEncoder::new_with_quality(std::io::BufWriter::new(file), SNAPSHOT_JPEG_QUALITY)
                    .encode_image(&img)
            });
            match written {
                Ok(()) => names.push(name),
                Err(e) => tracing::warn!(alert_id, error = %e, "snapshot write failed"),
            }
        }
        names
    }

    pub fn snapshot_path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    /// Records a human decision on a pending alert.
    pub fn review(
        &mut self,
        id: &str,
        decision: ReviewStatus,
        note: Option<String>,
        now_ms: u64,
    ) -> Result<AlertRecord, ReviewError> {
        if decision == ReviewStatus::Pending {
            return Err(ReviewError::InvalidDecision);
        }
        let mut rec = self.alerts.get(id).cloned().ok_or_else(|| ReviewError::NotFound(id.to_string()))?;
        if rec.review.status != ReviewStatus::Pending {
            return Err(ReviewError::AlreadyReviewed(id.to_string()));
        }
        rec.review = Review { status: decision, note, reviewed_ms: Some(now_ms) };
        self.append(&rec).map_err(|e| ReviewError::Store(e.to_string()))?;
        self.alerts.insert(id.to_string(), rec.clone());
        Ok(rec)
    }

    /// Removes snapshot payloads of alerts at least `retention_h` old. Alert
    /// metadata stays. Returns how many alerts were purged.
    pub fn cleanup_retention(&mut self, now_ms: u64, retention_h: f64) -> Result<usize, StoreError> {
        let retention_ms = (retention_h.max(0.0) * 3_600_000.0).round() as u64;
        let due: Vec<String> = self
            .alerts
            .values()
            .filter(|a| !a.snapshots_purged && now_ms.saturating_sub(a.created_ms) >= retention_ms)
            .map(|a| a.alert_id.clone())
            .collect();
        for id in &due {
            let mut rec = self.alerts[id].clone();
            if let Some(dir) = &self.dir {
                for name in &rec.snapshots {
                    match std::fs::remove_file(dir.join(name)) {
                        Ok(()) => {}
                        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                        Err(e) => return Err(StoreError::StoreWrite(e)),
                    }
                }
            }
            rec.snapshots.clear();
            rec.snapshots_purged = true;
            self.append(&rec)?;
            self.alerts.insert(id.clone(), rec);
        }
        Ok(due.len())
    }

    /// Alerts violating a store invariant; empty for a healthy store.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for a in self.alerts.values() {
            if !a.category.alerts() {
                bad.push(format!("{}: category {}", a.alert_id, a.category));
            }
            if a.clip_window[1] - a.clip_window[0] != CLIP_PRE_MS + CLIP_POST_MS
                || a.clip_window != clip_window(a.created_ms)
            {
                bad.push(format!("{}: clip window {:?}", a.alert_id, a.clip_window));
            }
        }
        bad
    }
}
