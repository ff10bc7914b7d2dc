//! Suspicion pre-filter: dwell gate plus at least one behavioral signal.
//!
//! Signals:
//! - `near_obj`: person center within `rho · diag` of a non-person detection center
//! - `hand_body`: a wrist within `theta_h · height` of the torso centroid
//! - `pickup`: a nearby object class vanished (or the nearby count dropped)
//!   since the previous frame; stays active for `pickup_persist_s`

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clip::ClipSpec;
use crate::event::{BBox, Detection, Keypoint};
use crate::registry::{PersonObservation, TrackKey, TrackState};

const LEFT_WRIST: usize = 9;
const RIGHT_WRIST: usize = 10;
const TORSO: [usize; 4] = [5, 6, 11, 12];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefilterConfig {
    pub tau_d_s: f64,
    pub rho: f64,
    pub theta_h: f64,
    pub tau_c_s: f64,
    pub rate_limit_per_min: u32,
    #[serde(rename = "clip_frames_k")]
    pub clip_frames_k: usize,
    #[serde(rename = "buffer_horizon_t_s")]
    pub buffer_horizon_t_s: f64,
    pub keypoint_conf_gate: f64,
    pub pickup_persist_s: f64,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        PrefilterConfig {
            tau_d_s: 3.0,
            rho: 0.3,
            theta_h: 0.3,
            tau_c_s: 10.0,
            rate_limit_per_min: 10,
            clip_frames_k: 5,
            buffer_horizon_t_s: 5.0,
            keypoint_conf_gate: 0.2,
            pickup_persist_s: 10.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid pre-filter config: {0}")]
pub struct ConfigError(pub String);

impl PrefilterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("tau_d_s", self.tau_d_s),
            ("tau_c_s", self.tau_c_s),
            ("buffer_horizon_t_s", self.buffer_horizon_t_s),
            ("keypoint_conf_gate", self.keypoint_conf_gate),
            ("pickup_persist_s", self.pickup_persist_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("rho", self.rho), ("theta_h", self.theta_h)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError(format!("{name} must lie in (0,1], got {v}")));
            }
        }
        if self.rate_limit_per_min == 0 {
            return Err(ConfigError("rate_limit_per_min must be >= 1".into()));
        }
        if self.clip_frames_k < 2 {
            return Err(ConfigError(format!("clip_frames_k must be >= 2, got {}", self.clip_frames_k)));
        }
        Ok(())
    }

    fn tau_d_ms(&self) -> f64 {
        self.tau_d_s * 1000.0
    }
}

/// Per-signal evidence recorded with each decision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalDetails {
    /// Nearest non-person detection distance, `None` if there were none.
    pub nearest_object_px: Option<f64>,
    pub near_threshold_px: f64,
    /// Nearest visible wrist to torso centroid, `None` if not computable.
    pub wrist_to_torso_px: Option<f64>,
    pub hand_threshold_px: f64,
    pub nearby_classes: Vec<u16>,
    pub pickup_active_until_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignalReport {
    pub near_obj: bool,
    pub hand_body: bool,
    pub pickup: bool,
    pub dwell_s: f64,
    pub details: SignalDetails,
}

impl SignalReport {
    pub fn any_signal(&self) -> bool {
        self.near_obj || self.hand_body || self.pickup
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldReason {
    DwellShort,
    NoSignal,
    Cooldown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TriggerDecision {
    Fire(SignalReport),
    Hold(HoldReason, SignalReport),
}

impl TriggerDecision {
    pub fn is_fire(&self) -> bool {
        matches!(self, TriggerDecision::Fire(_))
    }

    pub fn report(&self) -> &SignalReport {
        match self {
            TriggerDecision::Fire(r) | TriggerDecision::Hold(_, r) => r,
        }
    }
}

/// A fired trigger awaiting a verdict.
#[derive(Debug, Clone)]
pub struct VlmCandidate {
    pub id: u64,
    pub key: TrackKey,
    pub created_ms: u64,
    pub signal_report: SignalReport,
    pub clip: ClipSpec,
    /// Requests actually sent for this candidate (initial plus retries).
    pub attempts: u32,
    /// Scenario tag forwarded to test doubles; never set in production.
    pub tag: Option<String>,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Proximity signal. Returns whether any non-person detection center lies
/// within `rho · diag` of the person center, and the minimum such distance
/// (infinite when there are no non-person detections).
pub fn near_object(person: &BBox, detections: &[Detection], rho: f64) -> (bool, f64) {
    let center = person.center();
    let min = detections
        .iter()
        .filter(|d| !d.is_person())
        .map(|d| dist(center, d.bbox.center()))
        .fold(f64::INFINITY, f64::min);
    (min <= rho * person.diagonal(), min)
}

/// Classes of non-person detections inside the proximity radius.
pub fn nearby_classes(person: &BBox, detections: &[Detection], rho: f64) -> BTreeSet<u16> {
    let center = person.center();
    let radius = rho * person.diagonal();
    detections
        .iter()
        .filter(|d| !d.is_person() && dist(center, d.bbox.center()) <= radius)
        .map(|d| d.class_id)
        .collect()
}

/// Centroid of the torso keypoints passing the gate; needs at least two.
pub fn torso_centroid(keypoints: &[Keypoint], gate: f64) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = TORSO
        .iter()
        .filter_map(|&i| keypoints.get(i))
        .filter(|k| k.visible(gate))
        .map(Keypoint::pos)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    Some((pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n))
}

/// Distance of the nearest gated wrist to the torso centroid.
pub fn wrist_torso_distance(keypoints: &[Keypoint], gate: f64) -> Option<f64> {
    let center = torso_centroid(keypoints, gate)?;
    [LEFT_WRIST, RIGHT_WRIST]
        .iter()
        .filter_map(|&i| keypoints.get(i))
        .filter(|k| k.visible(gate))
        .map(|k| dist(k.pos(), center))
        .reduce(f64::min)
}

/// Hand-toward-body signal. False when the pose is missing or too few
/// keypoints clear the confidence gate.
pub fn hand_toward_body(keypoints: Option<&[Keypoint]>, person: &BBox, cfg: &PrefilterConfig) -> bool {
    keypoints
        .and_then(|k| wrist_torso_distance(k, cfg.keypoint_conf_gate))
        .is_some_and(|d| d <= cfg.theta_h * person.height())
}

/// Pickup signal. Triggers on a count drop or any vanished class, stamps the
/// persistence window and replaces the stored nearby set.
pub fn update_pickup(
    track: &mut TrackState,
    nearby_now: BTreeSet<u16>,
    now_ms: u64,
    cfg: &PrefilterConfig,
) -> bool {
    if pickup_triggered(&track.nearby_classes_prev, &nearby_now) {
        track.pickup_active_until_ms = Some(now_ms + (cfg.pickup_persist_s * 1000.0).round() as u64);
    }
    track.nearby_classes_prev = nearby_now;
    track.pickup_active_until_ms.is_some_and(|until| now_ms <= until)
}

pub fn pickup_triggered(prev: &BTreeSet<u16>, now: &BTreeSet<u16>) -> bool {
    now.len() < prev.len() || prev.difference(now).next().is_some()
}

/// Computes every signal for one observation and applies the trigger rule.
/// On `Fire` the track's cooldown stamp is set to `now_ms`.
pub fn evaluate_trigger(
    track: &mut TrackState,
    obs: &PersonObservation,
    detections: &[Detection],
    cfg: &PrefilterConfig,
) -> TriggerDecision {
    let now = obs.timestamp_ms;
    let (near_obj, nearest) = near_object(&obs.bbox, detections, cfg.rho);
    let kps = obs.keypoints.as_deref().map(|p| p.as_slice());
    let wrist = kps.and_then(|k| wrist_torso_distance(k, cfg.keypoint_conf_gate));
    let hand_threshold = cfg.theta_h * obs.bbox.height();
    let hand_body = wrist.is_some_and(|d| d <= hand_threshold);
    let nearby = nearby_classes(&obs.bbox, detections, cfg.rho);
    let nearby_list: Vec<u16> = nearby.iter().copied().collect();
    let pickup = update_pickup(track, nearby, now, cfg);
    let dwell_ms = now.saturating_sub(track.first_seen_ms) as f64;

    let report = SignalReport {
        near_obj,
        hand_body,
        pickup,
        dwell_s: dwell_ms / 1000.0,
        details: SignalDetails {
            nearest_object_px: nearest.is_finite().then_some(nearest),
            near_threshold_px: cfg.rho * obs.bbox.diagonal(),
            wrist_to_torso_px: wrist,
            hand_threshold_px: hand_threshold,
            nearby_classes: nearby_list,
            pickup_active_until_ms: track.pickup_active_until_ms,
        },
    };

    // Compare in integer-derived milliseconds so the 3 s boundary is exact.
    if dwell_ms < cfg.tau_d_ms() {
        return TriggerDecision::Hold(HoldReason::DwellShort, report);
    }
    if !report.any_signal() {
        return TriggerDecision::Hold(HoldReason::NoSignal, report);
    }
    if let Some(last) = track.last_vlm_dispatch_ms {
        if (now.saturating_sub(last) as f64) < cfg.tau_c_s * 1000.0 {
            return TriggerDecision::Hold(HoldReason::Cooldown, report);
        }
    }
    track.last_vlm_dispatch_ms = Some(now);
    TriggerDecision::Fire(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::FrameBuffer;
    use crate::event::{Pose, PERSON_CLASS};
    use crate::registry::TrackKey;
    use proptest::prelude::*;

    fn bb(x1: f32, y1: f32, x2: f32, y2: f32) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det_at(class_id: u16, cx: f32, cy: f32) -> Detection {
        Detection { class_id, confidence: 0.9, bbox: bb(cx - 10.0, cy - 10.0, cx + 10.0, cy + 10.0) }
    }

    fn pose(torso: [(f32, f32, f32); 4], wrists: [(f32, f32, f32); 2]) -> Pose {
        let mut p = [Keypoint::new(0.0, 0.0, 0.0); 17];
        for (slot, (x, y, c)) in TORSO.iter().zip(torso) {
            p[*slot] = Keypoint::new(x, y, c);
        }
        p[LEFT_WRIST] = Keypoint::new(wrists[0].0, wrists[0].1, wrists[0].2);
        p[RIGHT_WRIST] = Keypoint::new(wrists[1].0, wrists[1].1, wrists[1].2);
        p
    }

    const TORSO_OK: [(f32, f32, f32); 4] =
        [(150.0, 150.0, 0.9), (250.0, 150.0, 0.9), (160.0, 350.0, 0.9), (240.0, 350.0, 0.9)];

    fn track(first_seen: u64) -> TrackState {
        let key = TrackKey::new("c1", 7);
        TrackState {
            key: key.clone(),
            first_seen_ms: first_seen,
            last_seen_ms: first_seen,
            last_bbox: bb(0.0, 0.0, 300.0, 400.0),
            last_keypoints: None,
            nearby_classes_prev: BTreeSet::new(),
            pickup_active_until_ms: None,
            last_vlm_dispatch_ms: None,
            buffer: FrameBuffer::with_horizon(key, 5.0, 10),
        }
    }

    fn obs(ts: u64, keypoints: Option<Pose>) -> PersonObservation {
        PersonObservation {
            key: TrackKey::new("c1", 7),
            timestamp_ms: ts,
            bbox: bb(0.0, 0.0, 300.0, 400.0),
            keypoints: keypoints.map(Box::new),
        }
    }

    #[test]
    fn near_object_examples() {
        let person = bb(0.0, 0.0, 300.0, 400.0);
        let (near, d) = near_object(&person, &[det_at(39, 250.0, 200.0)], 0.3);
        assert!(near);
        assert!((d - 100.0).abs() < 1e-9);
        let (near, d) = near_object(&person, &[det_at(39, 450.0, 200.0)], 0.3);
        assert!(!near);
        assert!((d - 300.0).abs() < 1e-9);
        let (near, d) = near_object(&person, &[det_at(PERSON_CLASS, 150.0, 200.0)], 0.3);
        assert!(!near);
        assert!(d.is_infinite());
    }

    #[test]
    fn hand_body_examples() {
        let cfg = PrefilterConfig::default();
        let person = bb(0.0, 0.0, 300.0, 400.0);
        let p = pose(TORSO_OK, [(210.0, 300.0, 0.8), (0.0, 0.0, 0.0)]);
        assert_eq!(torso_centroid(&p, 0.2), Some((200.0, 250.0)));
        let d = wrist_torso_distance(&p, 0.2).unwrap();
        assert!((d - 50.990_195).abs() < 1e-5);
        assert!(hand_toward_body(Some(&p), &person, &cfg));

        let far = pose(TORSO_OK, [(200.0, 50.0, 0.8), (0.0, 0.0, 0.0)]);
        assert!(!hand_toward_body(Some(&far), &person, &cfg));

        let dim = TORSO_OK.map(|(x, y, _)| (x, y, 0.1));
        let gated = pose(dim, [(210.0, 300.0, 0.8), (200.0, 250.0, 0.9)]);
        assert!(!hand_toward_body(Some(&gated), &person, &cfg));

        assert!(!hand_toward_body(None, &person, &cfg));
    }

    #[test]
    fn conf_exactly_at_gate_is_absent() {
        let cfg = PrefilterConfig::default();
        let person = bb(0.0, 0.0, 300.0, 400.0);
        let p = pose(TORSO_OK, [(200.0, 250.0, 0.2), (200.0, 250.0, 0.2)]);
        assert!(!hand_toward_body(Some(&p), &person, &cfg));
    }

    #[test]
    fn single_torso_point_is_not_enough() {
        let torso = [(150.0, 150.0, 0.9), (250.0, 150.0, 0.1), (160.0, 350.0, 0.1), (240.0, 350.0, 0.1)];
        let p = pose(torso, [(150.0, 150.0, 0.9), (0.0, 0.0, 0.0)]);
        assert_eq!(torso_centroid(&p, 0.2), None);
    }

    #[test]
    fn pickup_examples() {
        let cfg = PrefilterConfig::default();
        let mut t = track(0);
        t.nearby_classes_prev = [39].into();
        assert!(update_pickup(&mut t, BTreeSet::new(), 5000, &cfg));
        assert_eq!(t.pickup_active_until_ms, Some(15_000));

        let mut t = track(0);
        assert!(!update_pickup(&mut t, [39].into(), 5000, &cfg));
        assert_eq!(t.nearby_classes_prev, [39].into());

        let mut t = track(0);
        t.nearby_classes_prev = [39, 41].into();
        assert!(update_pickup(&mut t, [41, 56].into(), 5000, &cfg));
    }

    #[test]
    fn pickup_persists_inclusive() {
        let cfg = PrefilterConfig::default();
        let mut t = track(0);
        t.nearby_classes_prev = [39].into();
        assert!(update_pickup(&mut t, BTreeSet::new(), 5000, &cfg));
        assert!(update_pickup(&mut t, BTreeSet::new(), 15_000, &cfg));
        assert!(!update_pickup(&mut t, BTreeSet::new(), 15_001, &cfg));
    }

    #[test]
    fn trigger_dwell_short() {
        let cfg = PrefilterConfig::default();
        let mut t = track(0);
        let d = evaluate_trigger(&mut t, &obs(2000, None), &[det_at(39, 150.0, 200.0)], &cfg);
        assert_eq!(d, TriggerDecision::Hold(HoldReason::DwellShort, d.report().clone()));
        assert!(d.report().near_obj);
        assert_eq!(t.last_vlm_dispatch_ms, None);
    }

    #[test]
    fn trigger_dwell_boundary_inclusive() {
        let cfg = PrefilterConfig::default();
        let mut t = track(0);
        let d = evaluate_trigger(&mut t, &obs(3000, None), &[det_at(39, 150.0, 200.0)], &cfg);
        assert!(d.is_fire());
        assert_eq!(d.report().dwell_s, 3.0);
    }

    #[test]
    fn trigger_no_signal() {
        let cfg = PrefilterConfig::default();
        let mut t = track(0);
        let d = evaluate_trigger(&mut t, &obs(5000, None), &[], &cfg);
        assert!(matches!(d, TriggerDecision::Hold(HoldReason::NoSignal, _)));
    }

    #[test]
    fn trigger_cooldown_boundary() {
        let cfg = PrefilterConfig::default();
        let hand = pose(TORSO_OK, [(210.0, 300.0, 0.8), (0.0, 0.0, 0.0)]);
        let mut t = track(0);
        t.last_vlm_dispatch_ms = Some(1000);
        let d = evaluate_trigger(&mut t, &obs(5000, Some(hand)), &[], &cfg);
        assert!(matches!(d, TriggerDecision::Hold(HoldReason::Cooldown, _)));
        assert!(d.report().hand_body);

        let mut t = track(0);
        t.last_vlm_dispatch_ms = Some(0);
        let d = evaluate_trigger(&mut t, &obs(10_000, Some(hand)), &[], &cfg);
        assert!(d.is_fire());
        assert_eq!(t.last_vlm_dispatch_ms, Some(10_000));

        let mut t = track(0);
        t.last_vlm_dispatch_ms = Some(1);
        let d = evaluate_trigger(&mut t, &obs(10_000, Some(hand)), &[], &cfg);
        assert!(matches!(d, TriggerDecision::Hold(HoldReason::Cooldown, _)));
    }

    #[test]
    fn config_validation() {
        assert!(PrefilterConfig::default().validate().is_ok());
        let bad = PrefilterConfig { rho: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PrefilterConfig { clip_frames_k: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PrefilterConfig { tau_d_s: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn person_box() -> impl Strategy<Value = BBox> {
        (0.0f32..500.0, 0.0f32..500.0, 10.0f32..300.0, 10.0f32..400.0)
            .prop_map(|(x, y, w, h)| BBox { x1: x, y1: y, x2: x + w, y2: y + h })
    }

    proptest! {
        #[test]
        fn near_object_scale_covariant(
            person in person_box(),
            objs in proptest::collection::vec((1u16..80, 0.0f32..900.0, 0.0f32..900.0), 0..6),
            s in 0.1f32..10.0,
        ) {
            let dets: Vec<Detection> = objs.iter().map(|&(c, x, y)| det_at(c, x + 10.0, y + 10.0)).collect();
            let scale = |b: &BBox| BBox { x1: b.x1 * s, y1: b.y1 * s, x2: b.x2 * s, y2: b.y2 * s };
            let scaled: Vec<Detection> = dets.iter().map(|d| Detection { bbox: scale(&d.bbox), ..d.clone() }).collect();
            let (a, da) = near_object(&person, &dets, 0.3);
            let (b, _) = near_object(&scale(&person), &scaled, 0.3);
            // f32 rounding can flip a point sitting on the boundary.
            let margin = (da - 0.3 * person.diagonal()).abs();
            prop_assume!(margin > 1e-3 * person.diagonal());
            prop_assert_eq!(a, b);
        }
    }
}
