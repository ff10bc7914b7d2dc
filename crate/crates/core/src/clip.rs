//! Per-person circular frame buffers and K-frame clip materialization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{BBox, Pose};
use crate::registry::TrackKey;

/// Padding applied around the person box when cropping clip frames.
pub const CROP_PAD_FRAC: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedFrame {
    pub timestamp_ms: u64,
    pub image_ref: Option<String>,
    pub person_bbox: BBox,
    pub keypoints: Option<Box<Pose>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClipError {
    #[error("frame at {found} ms is older than newest buffered frame at {newest} ms")]
    OutOfOrderFrame { newest: u64, found: u64 },
    #[error("frame buffer is empty")]
    EmptyBuffer,
    #[error("clip must request at least 2 frames, got {0}")]
    InvalidFrameCount(usize),
}

/// Time-bounded ring of recent frames for one track.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    key: TrackKey,
    frames: VecDeque<BufferedFrame>,
    horizon_ms: u64,
    hard_cap: usize,
}

impl FrameBuffer {
    pub fn new(key: TrackKey, horizon_ms: u64, hard_cap: usize) -> Self {
        FrameBuffer { key, frames: VecDeque::new(), horizon_ms, hard_cap: hard_cap.max(1) }
    }

    /// Buffer sized from the horizon `T` (seconds) and a nominal frame rate.
    /// The cap is `2·T·fps` so time-based eviction is the one that normally bites.
    pub fn with_horizon(key: TrackKey, horizon_s: f64, fps_nominal: u32) -> Self {
        let cap = (2.0 * horizon_s * f64::from(fps_nominal)).round() as usize;
        Self::new(key, (horizon_s * 1000.0).round() as u64, cap)
    }

    pub fn key(&self) -> &TrackKey {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn hard_cap(&self) -> usize {
        self.hard_cap
    }

    pub fn frames(&self) -> impl Iterator<Item = &BufferedFrame> {
        self.frames.iter()
    }

    pub fn newest_ms(&self) -> Option<u64> {
        self.frames.back().map(|f| f.timestamp_ms)
    }

    pub fn oldest_ms(&self) -> Option<u64> {
        self.frames.front().map(|f| f.timestamp_ms)
    }

    /// Appends a frame and evicts everything older than `newest - horizon`.
    ///
    /// A frame carrying the same timestamp as the newest one replaces it, so
    /// buffered timestamps stay strictly ascending under burst delivery.
    pub fn push_frame(&mut self, frame: BufferedFrame) -> Result<(), ClipError> {
        if let Some(newest) = self.newest_ms() {
            if frame.timestamp_ms < newest {
                return Err(ClipError::OutOfOrderFrame { newest, found: frame.timestamp_ms });
            }
            if frame.timestamp_ms == newest {
                self.frames.pop_back();
            }
        }
        let now = frame.timestamp_ms;
        self.frames.push_back(frame);
        while let Some(oldest) = self.oldest_ms() {
            if now - oldest > self.horizon_ms {
                self.frames.pop_front();
            } else {
                break;
            }
        }
        while self.frames.len() > self.hard_cap {
            self.frames.pop_front();
        }
        Ok(())
    }

    /// Samples `k` evenly spaced frames into a clip, cropping each with padding.
    pub fn sample_clip(&self, k: usize, frame_w: f64, frame_h: f64) -> Result<ClipSpec, ClipError> {
        if k < 2 {
            return Err(ClipError::InvalidFrameCount(k));
        }
        if self.frames.is_empty() {
            return Err(ClipError::EmptyBuffer);
        }
        let frames = even_indices(self.frames.len(), k)
            .into_iter()
            .map(|i| {
                let f = &self.frames[i];
                ClipFrame {
                    timestamp_ms: f.timestamp_ms,
                    image_ref: f.image_ref.clone(),
                    crop_rect: crop_with_padding(&f.person_bbox, frame_w, frame_h, CROP_PAD_FRAC),
                    keypoints: f.keypoints.clone(),
                }
            })
            .collect::<Vec<_>>();
        Ok(ClipSpec { key: self.key.clone(), label_total: frames.len(), frames })
    }
}

/// Endpoint-inclusive even sampling: `round_half_up(i·(n−1)/(k−1))` for
/// `i in 0..k`. When `n < k` every index is returned once.
pub fn even_indices(n: usize, k: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if n <= k {
        return (0..n).collect();
    }
    if k < 2 {
        return vec![n - 1];
    }
    let (n1, k1) = ((n - 1) as u64, (k - 1) as u64);
    (0..k as u64)
        .map(|i| ((2 * i * n1 + k1) / (2 * k1)) as usize)
        .collect()
}

/// Expands each side by `pad_frac` of the box dimension on that axis, then
/// clamps to the frame.
pub fn crop_with_padding(bbox: &BBox, frame_w: f64, frame_h: f64, pad_frac: f64) -> BBox {
    let (pw, ph) = (bbox.width() * pad_frac, bbox.height() * pad_frac);
    let clamp = |v: f64, hi: f64| v.clamp(0.0, hi) as f32;
    BBox {
        x1: clamp(f64::from(bbox.x1) - pw, frame_w),
        y1: clamp(f64::from(bbox.y1) - ph, frame_h),
        x2: clamp(f64::from(bbox.x2) + pw, frame_w),
        y2: clamp(f64::from(bbox.y2) + ph, frame_h),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub crop_rect: BBox,
    /// Pose at capture, used for face obfuscation of persisted snapshots.
    #[serde(skip)]
    pub keypoints: Option<Box<Pose>>,
}

/// Immutable clip handed to the VLM gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSpec {
    pub key: TrackKey,
    pub frames: Vec<ClipFrame>,
    /// Denominator for `[Frame i/N]` labels.
    pub label_total: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> TrackKey {
        TrackKey::new("c1", 7)
    }

    fn frame(ts: u64) -> BufferedFrame {
        BufferedFrame {
            timestamp_ms: ts,
            image_ref: None,
            person_bbox: BBox::new(100.0, 100.0, 200.0, 300.0).unwrap(),
            keypoints: None,
        }
    }

    #[test]
    fn push_into_empty() {
        let mut b = FrameBuffer::with_horizon(key(), 5.0, 10);
        b.push_frame(frame(0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn time_eviction_trace() {
        let mut b = FrameBuffer::with_horizon(key(), 5.0, 10);
        for t in (0..=5000).step_by(1000) {
            b.push_frame(frame(t)).unwrap();
        }
        assert_eq!(b.len(), 6);
        b.push_frame(frame(6000)).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b.oldest_ms(), Some(1000));
    }

    #[test]
    fn hard_cap_at_one_hundred() {
        let mut b = FrameBuffer::with_horizon(key(), 5.0, 10);
        assert_eq!(b.hard_cap(), 100);
        for i in 0..101u64 {
            b.push_frame(frame(i * 40)).unwrap();
        }
        assert_eq!(b.len(), 100);
        assert_eq!(b.oldest_ms(), Some(40));
    }

    #[test]
    fn out_of_order_rejected() {
        let mut b = FrameBuffer::with_horizon(key(), 5.0, 10);
        b.push_frame(frame(500)).unwrap();
        assert_eq!(
            b.push_frame(frame(499)),
            Err(ClipError::OutOfOrderFrame { newest: 500, found: 499 })
        );
        b.push_frame(frame(500)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn even_indices_examples() {
        assert_eq!(even_indices(50, 5), vec![0, 12, 25, 37, 49]);
        assert_eq!(even_indices(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(even_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(even_indices(2, 5), vec![0, 1]);
    }

    #[test]
    fn short_buffer_clip_relabels() {
        let mut b = FrameBuffer::with_horizon(key(), 5.0, 10);
        for t in [0, 100, 200] {
            b.push_frame(frame(t)).unwrap();
        }
        let clip = b.sample_clip(5, 640.0, 480.0).unwrap();
        assert_eq!(clip.label_total, 3);
        assert_eq!(clip.frames.len(), 3);
    }

    #[test]
    fn empty_buffer_clip_errors() {
        let b = FrameBuffer::with_horizon(key(), 5.0, 10);
        assert_eq!(b.sample_clip(5, 640.0, 480.0), Err(ClipError::EmptyBuffer));
    }

    #[test]
    fn crop_examples() {
        let b = BBox::new(100.0, 100.0, 200.0, 300.0).unwrap();
        assert_eq!(crop_with_padding(&b, 640.0, 480.0, 0.2), BBox::new(80.0, 60.0, 220.0, 340.0).unwrap());
        let corner = BBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        assert_eq!(
            crop_with_padding(&corner, 640.0, 480.0, 0.2),
            BBox::new(0.0, 0.0, 120.0, 120.0).unwrap()
        );
        assert_eq!(crop_with_padding(&b, 640.0, 480.0, 0.0), b);
    }

    fn bbox_in_frame() -> impl Strategy<Value = (BBox, f64, f64)> {
        (50u32..2000, 50u32..2000).prop_flat_map(|(w, h)| {
            let (wf, hf) = (w as f32, h as f32);
            (0.0..wf - 2.0, 0.0..hf - 2.0).prop_flat_map(move |(x1, y1)| {
                (Just(x1), Just(y1), (x1 + 1.0)..wf, (y1 + 1.0)..hf).prop_map(move |(x1, y1, x2, y2)| {
                    (BBox { x1, y1, x2, y2 }, f64::from(wf), f64::from(hf))
                })
            })
        })
    }

    proptest! {
        #[test]
        fn crop_stays_in_frame_and_contains_box((b, w, h) in bbox_in_frame(), pad in 0.0f64..1.0) {
            let c = crop_with_padding(&b, w, h, pad);
            prop_assert!(c.x1 >= 0.0 && c.y1 >= 0.0);
            prop_assert!(f64::from(c.x2) <= w && f64::from(c.y2) <= h);
            prop_assert!(c.x1 <= b.x1 && c.y1 <= b.y1 && c.x2 >= b.x2 && c.y2 >= b.y2);
        }

        #[test]
        fn buffer_span_and_clip_order(steps in proptest::collection::vec(0u64..900, 1..200), k in 2usize..9) {
            let mut b = FrameBuffer::with_horizon(key(), 5.0, 10);
            let mut t = 0;
            for s in steps {
                t += s;
                b.push_frame(frame(t)).unwrap();
                prop_assert!(b.newest_ms().unwrap() - b.oldest_ms().unwrap() <= 5000);
                prop_assert!(b.len() <= b.hard_cap());
            }
            let clip = b.sample_clip(k, 640.0, 480.0).unwrap();
            let buffered: Vec<u64> = b.frames().map(|f| f.timestamp_ms).collect();
            for w in clip.frames.windows(2) {
                prop_assert!(w[0].timestamp_ms < w[1].timestamp_ms);
            }
            for f in &clip.frames {
                prop_assert!(buffered.contains(&f.timestamp_ms));
            }
        }

        #[test]
        fn k_equals_n_is_identity(n in 2usize..200) {
            prop_assert_eq!(even_indices(n, n), (0..n).collect::<Vec<_>>());
        }
    }
}
