//! Render-vs-photo feature distance: Harris corners, normalized patch
//! descriptors, ratio-tested NCC matching and a pixel displacement gate.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub top_k: usize,
    /// Descriptor patches are `(2r + 1)²`.
    pub patch_radius: u32,
    pub harris_k: f32,
    /// Corners must exceed this fraction of the strongest response.
    pub relative_threshold: f32,
    pub nms_radius: u32,
    pub ratio: f32,
    pub min_matches: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            top_k: 500,
            patch_radius: 5,
            harris_k: 0.04,
            relative_threshold: 0.01,
            nms_radius: 2,
            ratio: 0.9,
            min_matches: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    pub x: u32,
    pub y: u32,
    pub response: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatchResult {
    pub mean_distance_px: f64,
    pub matches: usize,
}

/// Harris response over a 5×5 box window of Sobel gradient products.
pub fn harris_response(img: &GrayImage, k: f32) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = |x: usize, y: usize| img.as_raw()[y * w + x] as f32 / 255.0;
    let mut ixx = vec![0f32; w * h];
    let mut iyy = vec![0f32; w * h];
    let mut ixy = vec![0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x - 1, y)
                - px(x - 1, y + 1))
                / 8.0;
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x, y - 1)
                - px(x + 1, y - 1))
                / 8.0;
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let mut r = vec![0f32; w * h];
    for y in 3..h.saturating_sub(3) {
        for x in 3..w.saturating_sub(3) {
            let (mut a, mut b, mut c) = (0f32, 0f32, 0f32);
            for yy in y - 2..=y + 2 {
                for xx in x - 2..=x + 2 {
                    let i = yy * w + xx;
                    a += ixx[i];
                    b += iyy[i];
                    c += ixy[i];
                }
            }
            r[y * w + x] = a * b - c * c - k * (a + b) * (a + b);
        }
    }
    r
}

/// Strongest non-max-suppressed Harris corners far enough from the border for
/// a full descriptor patch. Ties keep raster order.
pub fn detect_corners(img: &GrayImage, cfg: &FeatureConfig) -> Vec<Corner> {
    let (w, h) = (img.width(), img.height());
    let r = harris_response(img, cfg.harris_k);
    let max = r.iter().cloned().fold(0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let margin = cfg.patch_radius.max(3) + 1;
    let nr = cfg.nms_radius as i64;
    let mut out = Vec::new();
    if w <= 2 * margin || h <= 2 * margin {
        return out;
    }
    for y in margin..h - margin {
        for x in margin..w - margin {
            let v = r[(y * w + x) as usize];
            if v <= cfg.relative_threshold * max {
                continue;
            }
            let mut is_max = true;
            'nbr: for dy in -nr..=nr {
                for dx in -nr..=nr {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let o = r[(yy as u32 * w + xx as u32) as usize];
                    // Plateaus keep their first pixel in raster order.
                    let earlier = (dy, dx) < (0, 0);
                    if o > v || (o == v && earlier) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                out.push(Corner { x, y, response: v });
            }
        }
    }
    out.sort_by(|a, b| b.response.total_cmp(&a.response));
    out.truncate(cfg.top_k);
    out
}

fn describe(img: &GrayImage, c: &Corner, radius: u32) -> Option<Vec<f32>> {
    let w = img.width();
    let mut patch = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    for y in c.y - radius..=c.y + radius {
        for x in c.x - radius..=c.x + radius {
            patch.push(img.as_raw()[(y * w + x) as usize] as f32);
        }
    }
    let n = patch.len() as f32;
    let mean = patch.iter().sum::<f32>() / n;
    let var = patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    if var < 1e-6 {
        return None;
    }
    let sd = var.sqrt();
    Some(patch.iter().map(|v| (v - mean) / sd).collect())
}

/// Mean pixel displacement of gated feature matches from `rendered` to `photo`.
pub fn feature_pixel_distance(
    rendered: &GrayImage,
    photo: &GrayImage,
    gate_px: f64,
    cfg: &FeatureConfig,
) -> Result<FeatureMatchResult, MetricsError> {
    if rendered.dimensions() != photo.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            left: rendered.dimensions(),
            right: photo.dimensions(),
        });
    }
    let features = |img: &GrayImage| -> Vec<(Corner, Vec<f32>)> {
        detect_corners(img, cfg)
            .into_iter()
            .filter_map(|c| describe(img, &c, cfg.patch_radius).map(|d| (c, d)))
            .collect()
    };
    let a = features(rendered);
    let b = features(photo);
    let mut total = 0.0;
    let mut count = 0usize;
    for (ca, da) in &a {
        let (mut best, mut second, mut best_j) = (f32::INFINITY, f32::INFINITY, usize::MAX);
        for (j, (_, db)) in b.iter().enumerate() {
            let ncc = da.iter().zip(db).map(|(x, y)| x * y).sum::<f32>() / da.len() as f32;
            let dist = (2.0 - 2.0 * ncc).max(0.0).sqrt();
            if dist < best {
                second = best;
                best = dist;
                best_j = j;
            } else if dist < second {
                second = dist;
            }
        }
        if best_j == usize::MAX || !(best < cfg.ratio * second || second.is_infinite()) {
            continue;
        }
        let cb = &b[best_j].0;
        let d = ((ca.x as f64 - cb.x as f64).powi(2) + (ca.y as f64 - cb.y as f64).powi(2)).sqrt();
        if d <= gate_px {
            total += d;
            count += 1;
        }
    }
    if count < cfg.min_matches {
        return Err(MetricsError::InsufficientMatches(count));
    }
    Ok(FeatureMatchResult {
        mean_distance_px: total / count as f64,
        matches: count,
    })
}
