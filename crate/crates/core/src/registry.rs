//! Per-(camera, track) state across frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clip::{BufferedFrame, FrameBuffer};
use crate::event::{BBox, Detection, FrameEvent, Pose};

/// Identifies one person's presence on one camera.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackKey {
    pub camera_id: String,
    pub track_id: u64,
}

impl TrackKey {
    pub fn new(camera_id: impl Into<String>, track_id: u64) -> Self {
        TrackKey { camera_id: camera_id.into(), track_id }
    }
}

impl fmt::Display for TrackKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.camera_id, self.track_id)
    }
}

#[derive(Debug, Clone)]
pub struct TrackState {
    pub key: TrackKey,
    pub first_seen_ms: u64,
    pub last_seen_ms: u64,
    pub last_bbox: BBox,
    pub last_keypoints: Option<Box<Pose>>,
    pub nearby_classes_prev: BTreeSet<u16>,
    pub pickup_active_until_ms: Option<u64>,
    pub last_vlm_dispatch_ms: Option<u64>,
    pub buffer: FrameBuffer,
}

impl TrackState {
    /// Seconds since first sighting.
    pub fn dwell_seconds(&self, now_ms: u64) -> f64 {
        dwell_seconds(self.first_seen_ms, now_ms)
    }
}

pub fn dwell_seconds(first_seen_ms: u64, now_ms: u64) -> f64 {
    now_ms.saturating_sub(first_seen_ms) as f64 / 1000.0
}

/// Transient view handed to the pre-filter for one person on one frame.
#[derive(Debug, Clone)]
pub struct PersonObservation {
    pub key: TrackKey,
    pub timestamp_ms: u64,
    pub bbox: BBox,
    pub keypoints: Option<Box<Pose>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("stale event for camera {camera_id}: {found} ms < last {last} ms")]
    StaleEvent { camera_id: String, last: u64, found: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistryConfig {
    pub retention_ms: u64,
    pub buffer_horizon_s: f64,
    pub fps_nominal: u32,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig { retention_ms: 10_000, buffer_horizon_s: 5.0, fps_nominal: 10 }
    }
}

#[derive(Debug, Default, Clone)]
struct CameraPartition {
    last_ts: Option<u64>,
    tracks: BTreeMap<u64, TrackState>,
}

/// All live track state, partitioned by camera.
#[derive(Debug, Clone)]
pub struct Registry {
    cfg: RegistryConfig,
    cameras: BTreeMap<String, CameraPartition>,
    created_total: u64,
}

impl Registry {
    pub fn new(cfg: RegistryConfig) -> Self {
        Registry { cfg, cameras: BTreeMap::new(), created_total: 0 }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.cameras.values().map(|p| p.tracks.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Track states ever created, including ones already collected.
    pub fn created_total(&self) -> u64 {
        self.created_total
    }

    pub fn get(&self, key: &TrackKey) -> Option<&TrackState> {
        self.cameras.get(&key.camera_id)?.tracks.get(&key.track_id)
    }

    pub fn get_mut(&mut self, key: &TrackKey) -> Option<&mut TrackState> {
        self.cameras.get_mut(&key.camera_id)?.tracks.get_mut(&key.track_id)
    }

    pub fn keys(&self) -> impl Iterator<Item = TrackKey> + '_ {
        self.cameras
            .iter()
            .flat_map(|(cam, p)| p.tracks.keys().map(move |id| TrackKey::new(cam.clone(), *id)))
    }

    /// Folds one frame into the registry: creates or refreshes every tracked
    /// person and appends the frame to their buffers.
    pub fn ingest(&mut self, event: &FrameEvent) -> Result<Vec<PersonObservation>, RegistryError> {
        let cfg = self.cfg;
        let part = self.cameras.entry(event.camera_id.clone()).or_default();
        if let Some(last) = part.last_ts {
            if event.timestamp_ms < last {
                return Err(RegistryError::StaleEvent {
                    camera_id: event.camera_id.clone(),
                    last,
                    found: event.timestamp_ms,
                });
            }
        }
        part.last_ts = Some(event.timestamp_ms);
        let now = event.timestamp_ms;
        let mut out = Vec::with_capacity(event.tracks.len());
        for person in &event.tracks {
            let key = TrackKey::new(event.camera_id.clone(), person.track_id);
            let state = part.tracks.entry(person.track_id).or_insert_with(|| {
                self.created_total += 1;
                TrackState {
                    key: key.clone(),
                    first_seen_ms: now,
                    last_seen_ms: now,
                    last_bbox: person.bbox,
                    last_keypoints: None,
                    nearby_classes_prev: BTreeSet::new(),
                    pickup_active_until_ms: None,
                    last_vlm_dispatch_ms: None,
                    buffer: FrameBuffer::with_horizon(key.clone(), cfg.buffer_horizon_s, cfg.fps_nominal),
                }
            });
            state.last_seen_ms = now;
            state.last_bbox = person.bbox;
            state.last_keypoints = person.keypoints.clone();
            state
                .buffer
                .push_frame(BufferedFrame {
                    timestamp_ms: now,
                    image_ref: event.image_ref.clone(),
                    person_bbox: person.bbox,
                    keypoints: person.keypoints.clone(),
                })
                .expect("partition timestamps are monotone");
            out.push(PersonObservation {
                key,
                timestamp_ms: now,
                bbox: person.bbox,
                keypoints: person.keypoints.clone(),
            });
        }
        Ok(out)
    }

    /// Drops every track unseen for more than the retention period. The
    /// boundary is strict: a track exactly `retention_ms` old survives.
    pub fn gc_expired(&mut self, now_ms: u64) -> Vec<TrackKey> {
        let retention = self.cfg.retention_ms;
        let mut removed = Vec::new();
        for (cam, part) in self.cameras.iter_mut() {
            part.tracks.retain(|id, t| {
                let keep = now_ms.saturating_sub(t.last_seen_ms) <= retention;
                if !keep {
                    removed.push(TrackKey::new(cam.clone(), *id));
                }
                keep
            });
        }
        removed
    }
}

/// Non-person detections, for the proximity and pickup signals.
pub fn objects(detections: &[Detection]) -> impl Iterator<Item = &Detection> {
    detections.iter().filter(|d| !d.is_person())
}
