//! OpenAI chat-completions request construction.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clip::{ClipFrame, ClipSpec};
use crate::event::BBox;

/// JPEG quality for payload crops.
pub const PAYLOAD_JPEG_QUALITY: u8 = 80;
/// Longest side of a payload image after downscaling.
pub const PAYLOAD_MAX_SIDE: u32 = 768;

/// Behaviors the model is asked to look for, in prompt order.
pub const CONCEALMENT_BEHAVIORS: [&str; 5] = [
    "placing items into pockets or bags",
    "tucking items under clothing",
    "hiding items behind the body",
    "palming small items",
    "moving items from shelves toward the body",
];

fn system_prompt() -> String {
    let behaviors: String = CONCEALMENT_BEHAVIORS
        .iter()
        .map(|b| format!("- {b}\n"))
        .collect();
    format!(
        "You are a retail loss-prevention analyst reviewing a short sequence of \
cropped frames of one shopper, labeled in chronological order.\n\
\n\
Compare the frames in sequence. Track every item the person holds or touches: \
if an item is visible in an earlier frame (for example frame 1) and is no longer \
visible in a later frame (for example frame 3) without being returned to a shelf, \
the person may have concealed it.\n\
\n\
Look specifically for these observable actions:\n\
{behaviors}\
\n\
Base your judgement only on hand-object interactions and body posture, never on \
the person's appearance or identity.\n\
\n\
Answer in exactly this format:\n\
<VERDICT>\n\
Confidence: <integer 0-100>\n\
<one or two sentences describing what the person did>\n\
\n\
where <VERDICT> is one of:\n\
CONFIRMED - clear evidence of concealment (confidence 70-100)\n\
UNCERTAIN - suspicious but ambiguous (confidence 30-70)\n\
NORMAL - no concealment detected (confidence 0-30)\n"
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    /// Frame labels in order of appearance.
    pub fn frame_labels(&self) -> Vec<String> {
        self.user_parts()
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } if text.starts_with("[Frame ") => Some(text.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn image_count(&self) -> usize {
        self.user_parts()
            .iter()
            .filter(|p| matches!(p, ContentPart::ImageUrl { .. }))
            .count()
    }

    fn user_parts(&self) -> &[ContentPart] {
        self.messages
            .iter()
            .find(|m| m.role == "user")
            .and_then(|m| match &m.content {
                MessageContent::Parts(p) => Some(p.as_slice()),
                MessageContent::Text(_) => None,
            })
            .unwrap_or(&[])
    }

    pub fn system_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == "system")
            .and_then(|m| match &m.content {
                MessageContent::Text(t) => Some(t.as_str()),
                MessageContent::Parts(_) => None,
            })
            .unwrap_or("")
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("clip has no frames")]
    EmptyClip,
    #[error("frame {index} has no image_ref; live dispatch needs pixels")]
    MissingPixels { index: usize },
    #[error("image {path}: {error}")]
    Image {
        path: String,
        error: image::ImageError,
    },
}

/// How clip frames become message parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadMode {
    /// Load, crop and JPEG-encode each frame. Frames without pixels are an error.
    Pixels,
    /// Pixel-free traces: each frame is described in text (crop rectangle and time).
    TextOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
}

fn image_path(image_ref: &str) -> &str {
    image_ref.strip_prefix("file://").unwrap_or(image_ref)
}

pub fn load_rgb(image_ref: &str) -> Result<RgbImage, PromptError> {
    let path = image_path(image_ref);
    image::open(Path::new(path))
        .map(|i| i.to_rgb8())
        .map_err(|error| PromptError::Image { path: path.to_string(), error })
}

/// Crops `rect` (clamped to the image), bounds the long side and encodes JPEG.
pub fn encode_crop(img: &RgbImage, rect: &BBox) -> Vec<u8> {
    let (w, h) = img.dimensions();
    let x1 = (rect.x1.max(0.0).floor() as u32).min(w.saturating_sub(1));
    let y1 = (rect.y1.max(0.0).floor() as u32).min(h.saturating_sub(1));
    let x2 = (rect.x2.ceil() as u32).clamp(x1 + 1, w.max(x1 + 1));
    let y2 = (rect.y2.ceil() as u32).clamp(y1 + 1, h.max(y1 + 1));
    let crop = image::imageops::crop_imm(img, x1, y1, (x2 - x1).min(w - x1), (y2 - y1).min(h - y1)).to_image();
    let (cw, ch) = crop.dimensions();
    let crop = if cw.max(ch) > PAYLOAD_MAX_SIDE {
        let s = f64::from(PAYLOAD_MAX_SIDE) / f64::from(cw.max(ch));
        let nw = ((f64::from(cw) * s).round() as u32).max(1);
        let nh = ((f64::from(ch) * s).round() as u32).max(1);
        image::imageops::resize(&crop, nw, nh, FilterType::Triangle)
    } else {
        crop
    };
    let mut out = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut out, PAYLOAD_JPEG_QUALITY)
        .encode_image(&DynamicImage::ImageRgb8(crop))
        .expect("in-memory JPEG encoding");
    out.into_inner()
}

pub fn data_url(jpeg: &[u8]) -> String {
    format!("data:image/jpeg;base64,{}", base64::engine::general_purpose::STANDARD.encode(jpeg))
}

fn describe_frame(f: &ClipFrame) -> String {
    let r = &f.crop_rect;
    format!(
        "(no pixels) person crop [{}, {}, {}, {}] at t={} ms",
        r.x1, r.y1, r.x2, r.y2, f.timestamp_ms
    )
}

/// Builds the structured-verdict request for a clip. Deterministic: the same
/// clip and parameters always serialize to the same bytes.
pub fn build_prompt(clip: &ClipSpec, params: &PromptParams<'_>, mode: PayloadMode) -> Result<ChatRequest, PromptError> {
    if clip.frames.is_empty() {
        return Err(PromptError::EmptyClip);
    }
    let total = clip.label_total.max(clip.frames.len());
    let mut parts = Vec::with_capacity(clip.frames.len() * 2);
    for (i, frame) in clip.frames.iter().enumerate() {
        parts.push(ContentPart::Text { text: format!("[Frame {}/{}]", i + 1, total) });
        match mode {
            PayloadMode::Pixels => {
                let image_ref = frame.image_ref.as_deref().ok_or(PromptError::MissingPixels { index: i })?;
                let img = load_rgb(image_ref)?;
                parts.push(ContentPart::ImageUrl {
                    image_url: ImageUrl { url: data_url(&encode_crop(&img, &frame.crop_rect)) },
                });
            }
            PayloadMode::TextOnly => parts.push(ContentPart::Text { text: describe_frame(frame) }),
        }
    }
    Ok(ChatRequest {
        model: params.model.to_string(),
        temperature: params.temperature,
        max_tokens: params.max_tokens,
        messages: vec![
            ChatMessage { role: "system".into(), content: MessageContent::Text(system_prompt()) },
            ChatMessage { role: "user".into(), content: MessageContent::Parts(parts) },
        ],
    })
}
