//! Offline clip evaluation: sample frames from labelled clips, ask the VLM
//! for a verdict, and score CONFIRMED/UNCERTAIN as positive.
//!
//! Unlike the live path, whole frames are sent (no person crop). Verdicts
//! can also be scored from a recorded log, one JSON object per line with
//! `id`, `label` and either `response` (raw model text) or `category`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alerts::metrics::{confusion_metrics, ConfusionCounts, ConfusionMetrics};
use crate::clip::{even_indices, ClipFrame, ClipSpec};
use crate::event::BBox;
use crate::gateway::prompt::{build_prompt, PayloadMode, PromptParams};
use crate::gateway::transport::{extract_content, DispatchError, Transport};
use crate::gateway::{parse_verdict, Category, GatewayConfig};
use crate::registry::TrackKey;

pub const EVAL_FRAMES: usize = 5;
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub id: String,
    /// Directory of frame images, ordered by file name. Relative paths
    /// resolve against the manifest's directory.
    pub dir: PathBuf,
    /// True for concealment clips.
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub clips: Vec<ManifestClip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub clips: usize,
    pub errors: usize,
    pub metrics: ConfusionMetrics,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reading {path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |error| EvalError::Io { path: path.display().to_string(), error }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut m: Manifest = serde_json::from_str(&text)
        .map_err(|e| EvalError::Parse { path: path.display().to_string(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for c in &mut m.clips {
        if c.dir.is_relative() {
            c.dir = base.join(&c.dir);
        }
    }
    Ok(m)
}

/// Frame images in a clip directory, sorted by file name.
pub fn clip_frames(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort();
    Ok(frames)
}

/// Clip of evenly spaced whole frames.
pub fn full_frame_clip(id: &str, frames: &[PathBuf], k: usize) -> Result<ClipSpec, String> {
    if frames.is_empty() {
        return Err("clip has no frames".into());
    }
    let picked = even_indices(frames.len(), k);
    let mut out = Vec::with_capacity(picked.len());
    for (n, i) in picked.iter().enumerate() {
        let path = &frames[*i];
        let (w, h) = image::image_dimensions(path).map_err(|e| format!("{}: {e}", path.display()))?;
        out.push(ClipFrame {
            // Position in the clip stands in for a capture time.
            timestamp_ms: n as u64,
            image_ref: Some(path.display().to_string()),
            crop_rect: BBox { x1: 0.0, y1: 0.0, x2: w as f32, y2: h as f32 },
            keypoints: None,
        });
    }
    Ok(ClipSpec { key: TrackKey::new(id, 1), label_total: out.len(), frames: out })
}

fn positive(c: Category) -> bool {
    matches!(c, Category::Confirmed | Category::Uncertain)
}

fn score(rows: Vec<EvalRow>) -> EvalReport {
    let mut counts = ConfusionCounts::default();
    let mut errors = 0;
    for r in &rows {
        match r.predicted {
            Some(p) => counts.add(p, r.label),
            None => errors += 1,
        }
    }
    EvalReport {
        clips: rows.len(),
        errors,
        metrics: confusion_metrics(counts.tp, counts.fp, counts.tn, counts.fn_),
        rows,
    }
}

fn row_from_text(id: &str, label: bool, text: Result<String, String>) -> EvalRow {
    let mut row = EvalRow { id: id.to_string(), label, category: None, confidence: None, predicted: None, error: None };
    match text.and_then(|t| parse_verdict(&t).map_err(|e| e.to_string())) {
        Ok(v) if v.category == Category::Skipped => row.error = Some("SKIPPED is not a verdict".into()),
        Ok(v) => {
            row.category = Some(v.category);
            row.confidence = Some(v.confidence);
            row.predicted = Some(positive(v.category));
        }
        Err(e) => row.error = Some(e),
    }
    row
}

fn ask(transport: &mut dyn Transport, cfg: &GatewayConfig, clip: &ClipSpec) -> Result<String, DispatchError> {
    let params = PromptParams { model: &cfg.model_name, temperature: cfg.temperature, max_tokens: cfg.max_tokens };
    let body = build_prompt(clip, &params, PayloadMode::Pixels)
        .map_err(|e| DispatchError::Prompt(e.to_string()))?
        .to_json();
    let raw = transport.post_chat(&body, None)?;
    if !(200..300).contains(&raw.status) {
        return Err(DispatchError::HttpStatus(raw.status));
    }
    extract_content(&raw.body)
}

/// Runs the protocol over every manifest clip. Per-clip failures become
/// error rows and are left out of the counts.
pub fn evaluate_clips(manifest: &Manifest, transport: &mut dyn Transport, cfg: &GatewayConfig) -> EvalReport {
    let rows = manifest
        .clips
        .iter()
        .map(|c| {
            let text = clip_frames(&c.dir)
                .map_err(|e| e.to_string())
                .and_then(|frames| full_frame_clip(&c.id, &frames, EVAL_FRAMES))
                .and_then(|clip| ask(transport, cfg, &clip).map_err(|e| e.to_string()));
            row_from_text(&c.id, c.label, text)
        })
        .collect();
    score(rows)
}

#[derive(Debug, Deserialize)]
struct LoggedVerdict {
    id: String,
    label: bool,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    category: Option<String>,
}

/// Scores a recorded verdict log.
pub fn evaluate_verdict_log(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: LoggedVerdict = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        let text = match (v.response, v.category) {
            (Some(r), _) => Ok(r),
            (None, Some(c)) => Ok(c),
            (None, None) => Err("row has neither response nor category".to_string()),
        };
        rows.push(row_from_text(&v.id, v.label, text));
    }
    Ok(score(rows))
}
