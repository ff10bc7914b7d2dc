//! Face pixelation for persisted snapshots.

use image::RgbImage;

use crate::event::Keypoint;

pub const HEAD_KEYPOINTS: std::ops::Range<usize> = 0..5;
pub const PIXEL_BLOCK: u32 = 16;
pub const MIN_RADIUS_PX: f64 = 8.0;
pub const RADIUS_SCALE: f64 = 1.5;

/// Disc covering the head, in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceDisc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl FaceDisc {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        // Pixel centers.
        let dx = f64::from(x) + 0.5 - self.cx;
        let dy = f64::from(y) + 0.5 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Head disc from keypoints 0..=4 above the gate. Needs at least two.
pub fn face_disc(keypoints: &[Keypoint], gate: f64) -> Option<FaceDisc> {
    let pts: Vec<(f64, f64)> = keypoints
        .get(HEAD_KEYPOINTS)?
        .iter()
        .filter(|k| k.visible(gate))
        .map(Keypoint::pos)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut spread = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            spread = spread.max((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    Some(FaceDisc { cx, cy, radius: (RADIUS_SCALE * spread).max(MIN_RADIUS_PX) })
}

/// Pixelates the head disc in place. Each grid-aligned block is replaced,
/// inside the disc only, by the mean of its in-disc pixels. Returns the disc
/// that was applied, or `None` when too few head keypoints were visible.
pub fn obfuscate_faces(image: &mut RgbImage, keypoints: &[Keypoint], gate: f64) -> Option<FaceDisc> {
    let disc = face_disc(keypoints, gate)?;
    pixelate_disc(image, &disc, PIXEL_BLOCK);
    Some(disc)
}

pub fn pixelate_disc(image: &mut RgbImage, disc: &FaceDisc, block: u32) {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return;
    }
    let clamp_px = |v: f64, hi: u32| v.floor().clamp(0.0, f64::from(hi - 1)) as u32;
    let (x0, x1) = (clamp_px(disc.cx - disc.radius, w), clamp_px(disc.cx + disc.radius, w));
    let (y0, y1) = (clamp_px(disc.cy - disc.radius, h), clamp_px(disc.cy + disc.radius, h));
    let mut by = (y0 / block) * block;
    while by <= y1 {
        let mut bx = (x0 / block) * block;
        while bx <= x1 {
            let inside: Vec<(u32, u32)> = (by..(by + block).min(h))
                .flat_map(|y| (bx..(bx + block).min(w)).map(move |x| (x, y)))
                .filter(|&(x, y)| disc.contains(x, y))
                .collect();
            if !inside.is_empty() {
                let mut sum = [0u64; 3];
                for &(x, y) in &inside {
                    let p = image.get_pixel(x, y);
                    for c in 0..3 {
                        sum[c] += u64::from(p[c]);
                    }
                }
                let n = inside.len() as u64;
                let mean = image::Rgb(sum.map(|s| ((s + n / 2) / n) as u8));
                for &(x, y) in &inside {
                    image.put_pixel(x, y, mean);
                }
            }
            bx += block;
        }
        by += block;
    }
}
