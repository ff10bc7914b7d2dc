//! Wire model for per-frame detection events.
//!
//! One [`FrameEvent`] per JSON line. Producers (the detector bridge, the
//! simulator) emit these; everything downstream consumes validated values
//! only.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// COCO class id for persons.
pub const PERSON_CLASS: u16 = 0;

/// Number of COCO pose keypoints.
pub const KEYPOINT_COUNT: usize = 17;

/// Axis-aligned box in corner form, frame pixel coordinates.
///
/// Serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 4]", into = "[f32; 4]")]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl From<[f32; 4]> for BBox {
    fn from(v: [f32; 4]) -> Self {
        BBox { x1: v[0], y1: v[1], x2: v[2], y2: v[3] }
    }
}

impl From<BBox> for [f32; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    /// Builds a box, checking the corner-form invariants.
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self, String> {
        let b = BBox { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<(), String> {
        let c = [self.x1, self.y1, self.x2, self.y2];
        if c.iter().any(|v| !v.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        if c.iter().any(|v| *v < 0.0) {
            return Err("coordinates must be >= 0".into());
        }
        if self.x2 <= self.x1 {
            return Err(format!("x2 ({}) must exceed x1 ({})", self.x2, self.x1));
        }
        if self.y2 <= self.y1 {
            return Err(format!("y2 ({}) must exceed y1 ({})", self.y2, self.y1));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        f64::from(self.x2) - f64::from(self.x1)
    }

    pub fn height(&self) -> f64 {
        f64::from(self.y2) - f64::from(self.y1)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x1) + f64::from(self.x2)) / 2.0,
            (f64::from(self.y1) + f64::from(self.y2)) / 2.0,
        )
    }

    /// Length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// One pose keypoint. Serialized as `[x, y, conf]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f32; 3]", into = "[f32; 3]")]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub conf: f32,
}

impl From<[f32; 3]> for Keypoint {
    fn from(v: [f32; 3]) -> Self {
        Keypoint { x: v[0], y: v[1], conf: v[2] }
    }
}

impl From<Keypoint> for [f32; 3] {
    fn from(k: Keypoint) -> Self {
        [k.x, k.y, k.conf]
    }
}

impl Keypoint {
    pub fn new(x: f32, y: f32, conf: f32) -> Self {
        Keypoint { x, y, conf }
    }

    /// A keypoint at or below the gate counts as absent. Compared in `f32`,
    /// the wire precision, so a confidence of exactly `0.2` is gated out.
    pub fn visible(&self, gate: f64) -> bool {
        self.conf > gate as f32
    }

    pub fn pos(&self) -> (f64, f64) {
        (f64::from(self.x), f64::from(self.y))
    }
}

/// Fixed 17-slot COCO keypoint layout.
pub type Pose = [Keypoint; KEYPOINT_COUNT];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u16,
    pub confidence: f32,
    pub bbox: BBox,
}

impl Detection {
    pub fn is_person(&self) -> bool {
        self.class_id == PERSON_CLASS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPerson {
    pub track_id: u64,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "pose_serde")]
    pub keypoints: Option<Box<Pose>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub camera_id: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub tracks: Vec<TrackedPerson>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invariant violation in `{field}`: {message}")]
    Invariant { field: String, message: String },
}

impl ParseError {
    fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::Invariant { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("camera {camera_id}: frame_index regressed at position {position} ({previous} -> {found})")]
    RegressingFrameIndex { camera_id: String, position: usize, previous: u64, found: u64 },
    #[error("camera {camera_id}: timestamp regressed at position {position} ({previous} -> {found})")]
    RegressingTimestamp { camera_id: String, position: usize, previous: u64, found: u64 },
}

mod pose_serde {
    use super::{Keypoint, Pose, KEYPOINT_COUNT};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Box<Pose>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(p) => p.as_slice().serialize(s),
            None => s.serialize_none(),
        }
    }

    // Length is checked here so that a 16-point pose surfaces as a typed
    // invariant error rather than a generic serde failure.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Box<Pose>>, D::Error> {
        let raw: Option<Vec<Keypoint>> = Option::deserialize(d)?;
        match raw {
            None => Ok(None),
            Some(v) => {
                let n = v.len();
                let arr: Pose = v.try_into().map_err(|_| {
                    serde::de::Error::custom(format!(
                        "{}keypoints length {n} != {KEYPOINT_COUNT}",
                        super::KEYPOINT_LEN_TAG
                    ))
                })?;
                Ok(Some(Box::new(arr)))
            }
        }
    }
}

const KEYPOINT_LEN_TAG: &str = "@kp-len:";

/// Parses and validates one JSONL line.
pub fn parse_frame_event(line: &str) -> Result<FrameEvent, ParseError> {
    let event: FrameEvent = serde_json::from_str(line.trim()).map_err(|e| {
        use serde_json::error::Category;
        let msg = e.to_string();
        if let Some(idx) = msg.find(KEYPOINT_LEN_TAG) {
            let rest = &msg[idx + KEYPOINT_LEN_TAG.len()..];
            let rest = rest.split(" at line").next().unwrap_or(rest);
            return ParseError::invariant("tracks.keypoints", rest);
        }
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => ParseError::Malformed(msg),
            Category::Data => ParseError::Schema(msg),
        }
    })?;
    validate_event(&event)?;
    Ok(event)
}

/// Checks every per-event invariant on an already-typed event.
pub fn validate_event(event: &FrameEvent) -> Result<(), ParseError> {
    if event.camera_id.is_empty() {
        return Err(ParseError::invariant("camera_id", "must be non-empty"));
    }
    for (i, d) in event.detections.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(ParseError::invariant(
                format!("detections[{i}].confidence"),
                format!("{} outside [0,1]", d.confidence),
            ));
        }
        d.bbox
            .check()
            .map_err(|m| ParseError::invariant(format!("detections[{i}].bbox"), m))?;
    }
    let mut seen = BTreeSet::new();
    for (i, t) in event.tracks.iter().enumerate() {
        if t.track_id == 0 {
            return Err(ParseError::invariant(format!("tracks[{i}].track_id"), "must be positive"));
        }
        if !seen.insert(t.track_id) {
            return Err(ParseError::invariant(
                format!("tracks[{i}].track_id"),
                format!("duplicate track_id {}", t.track_id),
            ));
        }
        t.bbox
            .check()
            .map_err(|m| ParseError::invariant(format!("tracks[{i}].bbox"), m))?;
        if let Some(kps) = &t.keypoints {
            for (j, k) in kps.iter().enumerate() {
                if !k.x.is_finite() || !k.y.is_finite() {
                    return Err(ParseError::invariant(
                        format!("tracks[{i}].keypoints[{j}]"),
                        "coordinates must be finite",
                    ));
                }
                if !(0.0..=1.0).contains(&k.conf) {
                    return Err(ParseError::invariant(
                        format!("tracks[{i}].keypoints[{j}].conf"),
                        format!("{} outside [0,1]", k.conf),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Incremental per-camera monotonicity checker.
#[derive(Debug, Default, Clone)]
pub struct StreamValidator {
    last: BTreeMap<String, (u64, u64)>,
    position: usize,
}

impl StreamValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts the next event, or reports the first regression. Rejected
    /// events leave the validator state untouched.
    pub fn check(&mut self, event: &FrameEvent) -> Result<(), StreamError> {
        let position = self.position;
        if let Some(&(frame, ts)) = self.last.get(&event.camera_id) {
            if event.frame_index <= frame {
                return Err(StreamError::RegressingFrameIndex {
                    camera_id: event.camera_id.clone(),
                    position,
                    previous: frame,
                    found: event.frame_index,
                });
            }
            if event.timestamp_ms < ts {
                return Err(StreamError::RegressingTimestamp {
                    camera_id: event.camera_id.clone(),
                    position,
                    previous: ts,
                    found: event.timestamp_ms,
                });
            }
        }
        self.last
            .insert(event.camera_id.clone(), (event.frame_index, event.timestamp_ms));
        self.position += 1;
        Ok(())
    }
}

/// Confirms monotone frame_index and non-decreasing timestamps per camera.
pub fn validate_stream<'a, I>(events: I) -> Result<(), StreamError>
where
    I: IntoIterator<Item = &'a FrameEvent>,
{
    let mut v = StreamValidator::new();
    events.into_iter().try_for_each(|e| v.check(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_json(n: usize, conf: f32) -> String {
        let pts: Vec<String> = (0..n).map(|i| format!("[{},{},{}]", i * 3, i * 4, conf)).collect();
        format!("[{}]", pts.join(","))
    }

    fn ev(frame: u64, ts: u64) -> FrameEvent {
        FrameEvent {
            camera_id: "c1".into(),
            frame_index: frame,
            timestamp_ms: ts,
            image_ref: None,
            detections: vec![],
            tracks: vec![],
        }
    }

    #[test]
    fn empty_frame() {
        let e = parse_frame_event(
            r#"{"camera_id":"c1","frame_index":0,"timestamp_ms":0,"detections":[],"tracks":[]}"#,
        )
        .unwrap();
        assert_eq!(e, ev(0, 0));
    }

    #[test]
    fn seventeen_keypoints_pass_through() {
        let line = format!(
            r#"{{"camera_id":"c1","frame_index":3,"timestamp_ms":300,"detections":[{{"class_id":39,"confidence":0.8,"bbox":[1,2,30,40]}}],"tracks":[{{"track_id":7,"bbox":[10,10,110,310],"keypoints":{}}}]}}"#,
            pose_json(17, 0.9)
        );
        let e = parse_frame_event(&line).unwrap();
        let kps = e.tracks[0].keypoints.as_ref().unwrap();
        assert_eq!(kps.len(), 17);
        assert!(kps.iter().all(|k| k.conf == 0.9));
        assert_eq!(e.detections[0].bbox, BBox::new(1.0, 2.0, 30.0, 40.0).unwrap());
    }

    #[test]
    fn sixteen_keypoints_is_invariant_violation() {
        let line = format!(
            r#"{{"camera_id":"c1","frame_index":0,"timestamp_ms":0,"detections":[],"tracks":[{{"track_id":7,"bbox":[10,10,110,310],"keypoints":{}}}]}}"#,
            pose_json(16, 0.9)
        );
        match parse_frame_event(&line) {
            Err(ParseError::Invariant { field, message }) => {
                assert_eq!(field, "tracks.keypoints");
                assert!(message.contains("16"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_schema_errors() {
        assert!(matches!(parse_frame_event("{not json"), Err(ParseError::Malformed(_))));
        assert!(matches!(parse_frame_event(""), Err(ParseError::Malformed(_))));
        match parse_frame_event(r#"{"frame_index":0,"timestamp_ms":0}"#) {
            Err(ParseError::Schema(m)) => assert!(m.contains("camera_id"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_frame_event(r#"{"camera_id":"c","frame_index":-1,"timestamp_ms":0}"#),
            Err(ParseError::Schema(_))
        ));
    }

    #[test]
    fn bad_boxes_and_duplicates_rejected() {
        let inverted = r#"{"camera_id":"c","frame_index":0,"timestamp_ms":0,"tracks":[{"track_id":1,"bbox":[10,10,5,20]}]}"#;
        assert!(matches!(
            parse_frame_event(inverted),
            Err(ParseError::Invariant { field, .. }) if field == "tracks[0].bbox"
        ));
        let dup = r#"{"camera_id":"c","frame_index":0,"timestamp_ms":0,"tracks":[{"track_id":1,"bbox":[0,0,5,5]},{"track_id":1,"bbox":[0,0,5,5]}]}"#;
        assert!(matches!(parse_frame_event(dup), Err(ParseError::Invariant { .. })));
        let conf = r#"{"camera_id":"c","frame_index":0,"timestamp_ms":0,"detections":[{"class_id":3,"confidence":1.5,"bbox":[0,0,5,5]}]}"#;
        assert!(matches!(parse_frame_event(conf), Err(ParseError::Invariant { .. })));
        let zero_id = r#"{"camera_id":"c","frame_index":0,"timestamp_ms":0,"tracks":[{"track_id":0,"bbox":[0,0,5,5]}]}"#;
        assert!(matches!(parse_frame_event(zero_id), Err(ParseError::Invariant { .. })));
    }

    #[test]
    fn stream_monotone_ok() {
        let evs = [ev(0, 0), ev(1, 100), ev(2, 200)];
        assert_eq!(validate_stream(&evs), Ok(()));
    }

    #[test]
    fn stream_regressing_frame_index() {
        let evs = [ev(0, 0), ev(2, 100), ev(1, 200)];
        assert_eq!(
            validate_stream(&evs),
            Err(StreamError::RegressingFrameIndex {
                camera_id: "c1".into(),
                position: 2,
                previous: 2,
                found: 1
            })
        );
    }

    #[test]
    fn stream_duplicate_timestamps_allowed() {
        let evs = [ev(0, 0), ev(1, 100), ev(2, 100)];
        assert_eq!(validate_stream(&evs), Ok(()));
        let back = [ev(0, 0), ev(1, 100), ev(2, 99)];
        assert!(matches!(validate_stream(&back), Err(StreamError::RegressingTimestamp { .. })));
    }

    #[test]
    fn interleaved_cameras_are_independent() {
        let mut b = ev(0, 50);
        b.camera_id = "c2".into();
        let mut b2 = ev(1, 100);
        b2.camera_id = "c2".into();
        let evs = [ev(0, 0), b, ev(1, 100), b2, ev(2, 100)];
        assert_eq!(validate_stream(&evs), Ok(()));
    }
}
