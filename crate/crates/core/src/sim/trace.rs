//! Deterministic synthetic shopper traces.
//!
//! Each camera looks at one shelf row with five item slots. Shoppers arrive
//! by a Poisson process and follow piecewise-linear waypoint paths: walk
//! along the aisle lane, optionally step up to a slot and browse, optionally
//! take the item, optionally conceal it (both wrists held at the torso), then
//! leave. Geometry is chosen with wide margins around the pre-filter
//! thresholds so jitter never flips a signal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{parse_frame_event, BBox, Detection, FrameEvent, Keypoint, ParseError, Pose, TrackedPerson, PERSON_CLASS};
use crate::registry::TrackKey;

pub const FRAME_W: f64 = 640.0;
pub const FRAME_H: f64 = 480.0;
pub const SHELF_SLOTS_X: [f64; 5] = [80.0, 200.0, 320.0, 440.0, 560.0];
pub const SHELF_CLASSES: [u16; 5] = [39, 41, 46, 47, 49];
pub const SHELF_Y: f64 = 70.0;
const ITEM_HALF: f64 = 20.0;
const LANE_Y: f64 = 330.0;
const PERSON_W: f64 = 110.0;
const PERSON_H: f64 = 260.0;
const RESTOCK_MS: u64 = 20_000;
const BOX_JITTER_PX: f64 = 1.0;
const KEYPOINT_JITTER_PX: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    PassThrough,
    Browse,
    PickupNoConceal,
    Conceal,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [Behavior::PassThrough, Behavior::Browse, Behavior::PickupNoConceal, Behavior::Conceal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Behavior::PassThrough => "pass_through",
            Behavior::Browse => "browse",
            Behavior::PickupNoConceal => "pickup_no_conceal",
            Behavior::Conceal => "conceal",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Behavior::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown behavior {s:?}"))
    }
}

/// Scenario knobs. The three fractions are conditional: `browse_fraction`
/// of arrivals browse, `pickup_fraction` of browsers take an item and
/// `conceal_fraction` of those conceal it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub cameras: u32,
    pub fps: u32,
    pub duration_s: f64,
    /// Poisson mean per camera.
    pub arrival_rate_per_min: f64,
    pub browse_fraction: f64,
    pub pickup_fraction: f64,
    pub conceal_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            cameras: 4,
            fps: 10,
            duration_s: 60.0,
            arrival_rate_per_min: 2.0,
            browse_fraction: 0.6,
            pickup_fraction: 0.4,
            conceal_fraction: 0.25,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// A crowded minute: most arrivals browse, so triggers are plentiful.
    pub fn busy(seed: u64) -> Self {
        ScenarioConfig {
            arrival_rate_per_min: 10.0,
            browse_fraction: 0.9,
            pickup_fraction: 0.5,
            conceal_fraction: 0.4,
            seed,
            ..ScenarioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("browse_fraction", self.browse_fraction),
            ("pickup_fraction", self.pickup_fraction),
            ("conceal_fraction", self.conceal_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0,1], got {p}"));
            }
        }
        if self.fps < 1 {
            return Err("fps must be >= 1".into());
        }
        if self.cameras < 1 {
            return Err("cameras must be >= 1".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err("duration_s must be positive".into());
        }
        if !(self.arrival_rate_per_min.is_finite() && self.arrival_rate_per_min >= 0.0) {
            return Err("arrival_rate_per_min must be >= 0".into());
        }
        Ok(())
    }

    pub fn frames_per_camera(&self) -> u64 {
        (self.duration_s * f64::from(self.fps)).round() as u64
    }

    pub fn frame_time_ms(&self, index: u64) -> u64 {
        index * 1000 / u64::from(self.fps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShopperTruth {
    pub key: TrackKey,
    pub behavior: Behavior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conceal_time_ms: Option<u64>,
    pub arrival_ms: u64,
    pub exit_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub shoppers: Vec<ShopperTruth>,
}

impl GroundTruth {
    pub fn behavior_of(&self, key: &TrackKey) -> Option<Behavior> {
        self.shoppers.iter().find(|s| &s.key == key).map(|s| s.behavior)
    }

    pub fn behaviors(&self) -> BTreeMap<TrackKey, Behavior> {
        self.shoppers.iter().map(|s| (s.key.clone(), s.behavior)).collect()
    }

    pub fn count(&self, b: Behavior) -> usize {
        self.shoppers.iter().filter(|s| s.behavior == b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arms {
    Down,
    Reach,
    Conceal,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: u64,
    t1: u64,
    from: (f64, f64),
    to: (f64, f64),
}

/// One shopper's scripted path, in absolute milliseconds.
#[derive(Debug, Clone)]
pub struct ShopperPlan {
    pub track_id: u64,
    pub behavior: Behavior,
    pub arrival_ms: u64,
    scale: f64,
    slot: usize,
    segments: Vec<Segment>,
    reach: Option<(u64, u64)>,
    conceal: Option<(u64, u64)>,
    pickup_ms: Option<u64>,
}

impl ShopperPlan {
    pub fn exit_ms(&self) -> u64 {
        self.segments.last().map_or(self.arrival_ms, |s| s.t1)
    }

    fn size(&self) -> (f64, f64) {
        (PERSON_W * self.scale, PERSON_H * self.scale)
    }

    fn center_at(&self, t: u64) -> Option<(f64, f64)> {
        if t < self.arrival_ms || t > self.exit_ms() {
            return None;
        }
        let seg = self.segments.iter().find(|s| t <= s.t1).or(self.segments.last())?;
        let span = seg.t1.saturating_sub(seg.t0);
        let f = if span == 0 { 1.0 } else { (t.saturating_sub(seg.t0)) as f64 / span as f64 };
        let f = f.clamp(0.0, 1.0);
        Some((seg.from.0 + (seg.to.0 - seg.from.0) * f, seg.from.1 + (seg.to.1 - seg.from.1) * f))
    }

    fn arms_at(&self, t: u64) -> Arms {
        let within = |w: Option<(u64, u64)>| w.is_some_and(|(a, b)| t >= a && t <= b);
        if within(self.conceal) {
            Arms::Conceal
        } else if within(self.reach) {
            Arms::Reach
        } else {
            Arms::Down
        }
    }
}

fn secs(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> u64 {
    (rng.random_range(lo..hi) * 1000.0).round() as u64
}

fn walk(t0: u64, from: (f64, f64), to: (f64, f64), speed: f64) -> Segment {
    let d = (to.0 - from.0).hypot(to.1 - from.1);
    Segment { t0, t1: t0 + (d / speed * 1000.0).round() as u64, from, to }
}

fn stay(t0: u64, t1: u64, at: (f64, f64)) -> Segment {
    Segment { t0, t1, from: at, to: at }
}

fn plan_shopper(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, track_id: u64, arrival_ms: u64, behavior: Option<Behavior>) -> ShopperPlan {
    let behavior = behavior.unwrap_or_else(|| {
        if !rng.random_bool(cfg.browse_fraction) {
            Behavior::PassThrough
        } else if !rng.random_bool(cfg.pickup_fraction) {
            Behavior::Browse
        } else if !rng.random_bool(cfg.conceal_fraction) {
            Behavior::PickupNoConceal
        } else {
            Behavior::Conceal
        }
    });
    let scale = rng.random_range(0.95..1.05);
    let (w, h) = (PERSON_W * scale, PERSON_H * scale);
    let margin = w / 2.0 + 2.0;
    let from_left = rng.random_bool(0.5);
    let (entry_x, exit_x) = if from_left { (margin, FRAME_W - margin) } else { (FRAME_W - margin, margin) };
    let speed = rng.random_range(100.0..160.0);
    let slot = rng.random_range(0..SHELF_SLOTS_X.len());
    let sx = SHELF_SLOTS_X[slot].clamp(margin, FRAME_W - margin);
    // Box top two pixels below the frame edge; the center then sits well
    // inside rho * diagonal of the item.
    let reach_y = h / 2.0 + 2.0;
    let lane = (entry_x, LANE_Y);

    let mut plan = ShopperPlan {
        track_id,
        behavior,
        arrival_ms,
        scale,
        slot,
        segments: Vec::new(),
        reach: None,
        conceal: None,
        pickup_ms: None,
    };
    if behavior == Behavior::PassThrough {
        plan.segments.push(walk(arrival_ms, lane, (exit_x, LANE_Y), speed));
        return plan;
    }
    let s1 = walk(arrival_ms, lane, (sx, LANE_Y), speed);
    let s2 = walk(s1.t1, (sx, LANE_Y), (sx, reach_y), speed);
    let b0 = s2.t1;
    let mut browse_end = b0 + secs(rng, 5.0, 8.0);
    if behavior != Behavior::Browse {
        let pickup = b0 + secs(rng, 1.5, 3.0);
        plan.pickup_ms = Some(pickup);
        plan.reach = Some((pickup.saturating_sub(500), pickup));
        if behavior == Behavior::Conceal {
            let c0 = pickup + secs(rng, 0.8, 1.5);
            let c1 = c0 + secs(rng, 1.2, 2.0);
            plan.conceal = Some((c0, c1));
            browse_end = browse_end.max(c1 + 500);
        }
    } else {
        let r0 = b0 + secs(rng, 0.5, 2.0);
        plan.reach = Some((r0, r0 + 600));
    }
    let s3 = stay(b0, browse_end, (sx, reach_y));
    let s4 = walk(browse_end, (sx, reach_y), (sx, LANE_Y), speed);
    let s5 = walk(s4.t1, (sx, LANE_Y), (exit_x, LANE_Y), speed);
    plan.segments = vec![s1, s2, s3, s4, s5];
    plan
}

fn kp(x: f64, y: f64) -> Keypoint {
    Keypoint::new(((x * 10.0).round() / 10.0) as f32, ((y * 10.0).round() / 10.0) as f32, 0.9)
}

fn round1(v: f64) -> f32 {
    ((v * 10.0).round() / 10.0) as f32
}

/// COCO-17 pose for a box, in box-relative proportions.
fn pose_for(b: &BBox, arms: Arms, rng: &mut ChaCha8Rng) -> Pose {
    let (x1, y1) = (f64::from(b.x1), f64::from(b.y1));
    let (w, h) = (b.width(), b.height());
    let cx = x1 + w / 2.0;
    let at = |fx: f64, fy: f64| (cx + fx * w, y1 + fy * h);
    let mut pts = [
        at(0.0, 0.08),
        at(-0.05, 0.06),
        at(0.05, 0.06),
        at(-0.10, 0.07),
        at(0.10, 0.07),
        at(-0.25, 0.22),
        at(0.25, 0.22),
        at(-0.30, 0.40),
        at(0.30, 0.40),
        at(-0.32, 0.78),
        at(0.32, 0.78),
        at(-0.18, 0.55),
        at(0.18, 0.55),
        at(-0.12, 0.75),
        at(0.12, 0.75),
        at(-0.12, 0.97),
        at(0.12, 0.97),
    ];
    match arms {
        Arms::Down => {}
        Arms::Reach => {
            pts[8] = at(0.15, 0.10);
            pts[10] = at(0.05, 0.0);
        }
        Arms::Conceal => {
            pts[7] = at(-0.28, 0.35);
            pts[8] = at(0.28, 0.35);
            pts[9] = at(-0.08, 0.45);
            pts[10] = at(0.08, 0.45);
        }
    }
    let jitter = Normal::new(0.0, KEYPOINT_JITTER_PX).expect("valid sigma");
    for p in pts.iter_mut() {
        p.0 += jitter.sample(rng);
        p.1 += jitter.sample(rng);
    }
    pts.map(|(x, y)| kp(x, y))
}

#[derive(Debug, Default, Clone)]
struct Shelf {
    /// Slot index → restock time for slots currently empty.
    empty_until: BTreeMap<usize, u64>,
}

fn item_box(slot: usize) -> BBox {
    let x = SHELF_SLOTS_X[slot];
    BBox {
        x1: (x - ITEM_HALF) as f32,
        y1: (SHELF_Y - ITEM_HALF) as f32,
        x2: (x + ITEM_HALF) as f32,
        y2: (SHELF_Y + ITEM_HALF) as f32,
    }
}

fn camera_rng(seed: u64, camera: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(camera));
    rng
}

fn camera_id(camera: u32) -> String {
    format!("cam{}", camera + 1)
}

fn render_camera(
    cfg: &ScenarioConfig,
    camera: u32,
    plans: &[ShopperPlan],
    rng: &mut ChaCha8Rng,
) -> Vec<FrameEvent> {
    let cam = camera_id(camera);
    let mut pickups: Vec<(u64, usize)> = plans.iter().filter_map(|p| p.pickup_ms.map(|t| (t, p.slot))).collect();
    pickups.sort_unstable();
    let mut next_pickup = 0;
    let mut shelf = Shelf::default();
    let box_jitter = Normal::new(0.0, BOX_JITTER_PX).expect("valid sigma");
    let mut out = Vec::with_capacity(cfg.frames_per_camera() as usize);
    for i in 0..cfg.frames_per_camera() {
        let t = cfg.frame_time_ms(i);
        shelf.empty_until.retain(|_, until| t < *until);
        while next_pickup < pickups.len() && pickups[next_pickup].0 <= t {
            let (pt, slot) = pickups[next_pickup];
            shelf.empty_until.entry(slot).or_insert(pt + RESTOCK_MS);
            next_pickup += 1;
        }
        let mut detections: Vec<Detection> = (0..SHELF_SLOTS_X.len())
            .filter(|s| !shelf.empty_until.contains_key(s))
            .map(|s| Detection { class_id: SHELF_CLASSES[s], confidence: 0.85, bbox: item_box(s) })
            .collect();
        let mut tracks = Vec::new();
        for p in plans {
            let Some((cx, cy)) = p.center_at(t) else { continue };
            let (w, h) = p.size();
            let cx = cx + box_jitter.sample(rng);
            let cy = cy + box_jitter.sample(rng);
            let bbox = BBox {
                x1: round1((cx - w / 2.0).max(0.0)),
                y1: round1((cy - h / 2.0).max(0.0)),
                x2: round1((cx + w / 2.0).min(FRAME_W)),
                y2: round1((cy + h / 2.0).min(FRAME_H)),
            };
            let pose = pose_for(&bbox, p.arms_at(t), rng);
            detections.push(Detection { class_id: PERSON_CLASS, confidence: 0.9, bbox });
            tracks.push(TrackedPerson { track_id: p.track_id, bbox, keypoints: Some(Box::new(pose)) });
        }
        out.push(FrameEvent {
            camera_id: cam.clone(),
            frame_index: i,
            timestamp_ms: t,
            image_ref: None,
            detections,
            tracks,
        });
    }
    out
}

fn plan_camera(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<ShopperPlan> {
    let mut plans = Vec::new();
    if cfg.arrival_rate_per_min <= 0.0 {
        return plans;
    }
    let inter = Exp::new(cfg.arrival_rate_per_min / 60_000.0).expect("positive rate");
    let end_ms = cfg.duration_s * 1000.0;
    let mut t = 0.0;
    loop {
        t += inter.sample(rng);
        if t >= end_ms {
            break;
        }
        let id = plans.len() as u64 + 1;
        plans.push(plan_shopper(rng, cfg, id, t.round() as u64, None));
    }
    plans
}

impl ShopperPlan {
    /// Behavior as far as a trace ending at `last_frame_ms` shows it: a
    /// concealment must finish on camera, a pickup must happen on camera.
    fn observed_behavior(&self, last_frame_ms: u64) -> Behavior {
        match self.behavior {
            Behavior::Conceal if self.conceal.is_some_and(|(_, end)| end <= last_frame_ms) => Behavior::Conceal,
            Behavior::Conceal | Behavior::PickupNoConceal if self.pickup_ms.is_some_and(|t| t <= last_frame_ms) => {
                Behavior::PickupNoConceal
            }
            Behavior::Conceal | Behavior::PickupNoConceal => Behavior::Browse,
            b => b,
        }
    }
}

fn truth_for(camera: u32, plans: &[ShopperPlan], last_frame_ms: u64) -> impl Iterator<Item = ShopperTruth> + '_ {
    plans.iter().map(move |p| {
        let behavior = p.observed_behavior(last_frame_ms);
        ShopperTruth {
            key: TrackKey::new(camera_id(camera), p.track_id),
            behavior,
            conceal_time_ms: p.conceal.map(|c| c.0).filter(|_| behavior == Behavior::Conceal),
            arrival_ms: p.arrival_ms,
            exit_ms: p.exit_ms(),
        }
    })
}

/// Interleaves per-camera streams into one time-ordered stream.
fn merge(per_camera: Vec<Vec<FrameEvent>>) -> Vec<FrameEvent> {
    let n: usize = per_camera.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(n);
    let mut iters: Vec<_> = per_camera.into_iter().map(|v| v.into_iter().peekable()).collect();
    loop {
        let next = iters
            .iter_mut()
            .enumerate()
            .filter_map(|(i, it)| it.peek().map(|e| (e.timestamp_ms, i)))
            .min();
        let Some((_, i)) = next else { break };
        out.push(iters[i].next().expect("peeked"));
    }
    out
}

/// Generates the full trace: exactly `cameras · round(duration · fps)`
/// frame events, time-ordered, plus per-shopper ground truth.
pub fn generate_trace(cfg: &ScenarioConfig) -> Result<(Vec<FrameEvent>, GroundTruth), String> {
    cfg.validate()?;
    let mut streams = Vec::new();
    let mut truth = GroundTruth::default();
    let last_frame_ms = cfg.frame_time_ms(cfg.frames_per_camera().saturating_sub(1));
    for cam in 0..cfg.cameras {
        let mut rng = camera_rng(cfg.seed, cam);
        let plans = plan_camera(cfg, &mut rng);
        truth.shoppers.extend(truth_for(cam, &plans, last_frame_ms));
        streams.push(render_camera(cfg, cam, &plans, &mut rng));
    }
    Ok((merge(streams), truth))
}

/// One camera, one shopper of the given behavior arriving at t = 0. The
/// duration is stretched to cover the whole visit.
pub fn single_shopper_trace(behavior: Behavior, seed: u64, fps: u32) -> (Vec<FrameEvent>, GroundTruth) {
    let mut cfg = ScenarioConfig { cameras: 1, fps, seed, arrival_rate_per_min: 0.0, ..ScenarioConfig::default() };
    let mut rng = camera_rng(seed, 0);
    let plan = plan_shopper(&mut rng, &cfg, 1, 0, Some(behavior));
    cfg.duration_s = (plan.exit_ms() as f64 / 1000.0).ceil() + 1.0;
    let plans = vec![plan];
    let last_frame_ms = cfg.frame_time_ms(cfg.frames_per_camera() - 1);
    let truth = GroundTruth { shoppers: truth_for(0, &plans, last_frame_ms).collect() };
    let events = render_camera(&cfg, 0, &plans, &mut rng);
    (events, truth)
}

pub fn truth_path(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_os_string();
    s.push(".truth.jsonl");
    PathBuf::from(s)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Writes the trace and its `{trace}.truth.jsonl` sidecar.
pub fn write_trace(path: &Path, events: &[FrameEvent], truth: &GroundTruth) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    std::fs::write(truth_path(path), to_jsonl(&truth.shoppers))
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("reading {path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("{path}:{line}: {error}")]
    Parse { path: String, line: usize, error: ParseError },
    #[error("{path}:{line}: bad truth row: {message}")]
    Truth { path: String, line: usize, message: String },
}

/// Reads a FrameEvent JSONL stream from any reader. Blank lines are skipped.
pub fn read_events<R: BufRead>(reader: R, label: &str) -> Result<Vec<FrameEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|error| TraceError::Io { path: label.into(), error })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_frame_event(&line).map_err(|error| TraceError::Parse {
            path: label.into(),
            line: i + 1,
            error,
        })?);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<FrameEvent>, TraceError> {
    let label = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|error| TraceError::Io { path: label.clone(), error })?;
    read_events(BufReader::new(f), &label)
}

/// Loads the truth sidecar next to `trace`, if present.
pub fn read_truth(trace: &Path) -> Result<Option<GroundTruth>, TraceError> {
    let path = truth_path(trace);
    if !path.exists() {
        return Ok(None);
    }
    read_truth_file(&path).map(Some)
}

/// Reads ground truth JSONL, one shopper per line.
pub fn read_truth_file(path: &Path) -> Result<GroundTruth, TraceError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|error| TraceError::Io { path: label.clone(), error })?;
    let mut truth = GroundTruth::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: ShopperTruth = serde_json::from_str(line).map_err(|e| TraceError::Truth {
            path: label.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if row.conceal_time_ms.is_some() != (row.behavior == Behavior::Conceal) {
            return Err(TraceError::Truth {
                path: label.clone(),
                line: i + 1,
                message: "conceal_time_ms must be present exactly for conceal rows".into(),
            });
        }
        truth.shoppers.push(row);
    }
    Ok(truth)
}
