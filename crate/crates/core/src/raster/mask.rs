use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RasterError;

/// Row-major binary image. Each row is padded to whole 64-bit words; padding
/// bits are always zero so word-wise comparisons and popcounts are exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    stride: usize,
    words: Vec<u64>,
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.xmax - self.xmin + 1
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin + 1
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        let stride = (width as usize).div_ceil(64);
        Self {
            width,
            height,
            stride,
            words: vec![0; stride * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let w = self.words[y as usize * self.stride + (x as usize >> 6)];
        (w >> (x & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let idx = y as usize * self.stride + (x as usize >> 6);
        let bit = 1u64 << (x & 63);
        if value {
            self.words[idx] |= bit;
        } else {
            self.words[idx] &= !bit;
        }
    }

    /// Sets pixels `x0..=x1` of row `y`.
    #[inline]
    pub fn fill_span(&mut self, y: u32, x0: u32, x1: u32) {
        debug_assert!(x0 <= x1 && x1 < self.width);
        let row = y as usize * self.stride;
        let (w0, w1) = (x0 as usize >> 6, x1 as usize >> 6);
        let lo_mask = !0u64 << (x0 & 63);
        let hi_mask = !0u64 >> (63 - (x1 & 63));
        if w0 == w1 {
            self.words[row + w0] |= lo_mask & hi_mask;
        } else {
            self.words[row + w0] |= lo_mask;
            for w in &mut self.words[row + w0 + 1..row + w1] {
                *w = !0;
            }
            self.words[row + w1] |= hi_mask;
        }
    }

    /// Zeroes rows `y0..=y1`.
    pub fn clear_rows(&mut self, y0: u32, y1: u32) {
        let a = y0 as usize * self.stride;
        let b = (y1 as usize + 1) * self.stride;
        self.words[a..b].fill(0);
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Number of set pixels in rows `y0..=y1`.
    pub fn count_rows(&self, y0: u32, y1: u32) -> u64 {
        let a = y0 as usize * self.stride;
        let b = (y1 as usize + 1) * self.stride;
        self.words[a..b].iter().map(|w| w.count_ones() as u64).sum()
    }

    /// `|self ∩ other|` restricted to rows `y0..=y1`.
    pub fn intersection_count_rows(&self, other: &BinaryMask, y0: u32, y1: u32) -> u64 {
        let a = y0 as usize * self.stride;
        let b = (y1 as usize + 1) * self.stride;
        self.words[a..b]
            .iter()
            .zip(&other.words[a..b])
            .map(|(x, y)| (x & y).count_ones() as u64)
            .sum()
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<(), RasterError> {
        if self.dimensions() != other.dimensions() {
            return Err(RasterError::DimensionMismatch {
                left: self.dimensions(),
                right: other.dimensions(),
            });
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<u64, RasterError> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, RasterError> {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, RasterError> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask, RasterError> {
        self.zip_words(other, |a, b| a & !b)
    }

    fn zip_words(&self, other: &BinaryMask, f: impl Fn(u64, u64) -> u64) -> Result<BinaryMask, RasterError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (o, b) in out.words.iter_mut().zip(&other.words) {
            *o = f(*o, *b);
        }
        Ok(out)
    }

    /// Iterates over the coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |y| {
            let row = &self.words[y as usize * self.stride..(y as usize + 1) * self.stride];
            row.iter().enumerate().flat_map(move |(wi, &w)| {
                let mut bits = w;
                std::iter::from_fn(move || {
                    if bits == 0 {
                        return None;
                    }
                    let b = bits.trailing_zeros();
                    bits &= bits - 1;
                    Some(((wi as u32) * 64 + b, y))
                })
            })
        })
    }

    /// 8-bit grayscale PNG, 255 for set pixels.
    pub fn to_png_8bit(&self) -> Result<Vec<u8>, RasterError> {
        let mut data = vec![0u8; self.width as usize * self.height as usize];
        for (x, y) in self.iter_set() {
            data[y as usize * self.width as usize + x as usize] = 255;
        }
        encode_png(self.width, self.height, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
    }

    /// 1-bit grayscale PNG.
    pub fn to_png_1bit(&self) -> Result<Vec<u8>, RasterError> {
        let row_bytes = (self.width as usize).div_ceil(8);
        let mut data = vec![0u8; row_bytes * self.height as usize];
        for (x, y) in self.iter_set() {
            data[y as usize * row_bytes + (x as usize >> 3)] |= 0x80 >> (x & 7);
        }
        encode_png(self.width, self.height, png::ColorType::Grayscale, png::BitDepth::One, &data)
    }

    /// Decodes any grayscale or color image; nonzero pixels (any channel) are set.
    pub fn from_image_bytes(bytes: &[u8]) -> Result<BinaryMask, RasterError> {
        let img = image::load_from_memory(bytes).map_err(|e| RasterError::Image(e.to_string()))?;
        let rgb = img.to_rgb16();
        let (w, h) = rgb.dimensions();
        Ok(BinaryMask::from_fn(w, h, |x, y| rgb.get_pixel(x, y).0.iter().any(|&c| c != 0)))
    }

    pub fn load(path: &Path) -> Result<BinaryMask, RasterError> {
        let bytes = std::fs::read(path).map_err(|e| RasterError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_image_bytes(&bytes)
    }
}

pub(crate) fn encode_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| RasterError::Image(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| RasterError::Image(e.to_string()))?;
    }
    Ok(out)
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1 when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, RasterError> {
    let inter = a.intersection_count(b)?;
    let union = a.count() + b.count() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Pixels of `m` removed by `thickness` rounds of 4-neighbor erosion, treating
/// everything outside the image as unset.
pub fn mask_boundary(m: &BinaryMask, thickness: u32) -> BinaryMask {
    let mut eroded = m.clone();
    for _ in 0..thickness.max(1) {
        eroded = erode4(&eroded);
    }
    m.difference(&eroded).expect("same dimensions")
}

fn erode4(m: &BinaryMask) -> BinaryMask {
    let mut out = BinaryMask::new(m.width, m.height);
    if m.width == 0 || m.height == 0 {
        return out;
    }
    let stride = m.stride;
    let last_bits = m.width as usize - (stride - 1) * 64;
    let last_mask = if last_bits == 64 { !0u64 } else { (1u64 << last_bits) - 1 };
    for y in 0..m.height as usize {
        if y == 0 || y + 1 == m.height as usize {
            continue;
        }
        let row = &m.words[y * stride..(y + 1) * stride];
        let up = &m.words[(y - 1) * stride..y * stride];
        let down = &m.words[(y + 1) * stride..(y + 2) * stride];
        for i in 0..stride {
            let w = row[i];
            if w == 0 {
                continue;
            }
            // Neighbor at x-1 shifted into position x, carrying across words;
            // pixel 0 has no left neighbor.
            let carry_left = if i > 0 { row[i - 1] >> 63 } else { 0 };
            let left = (w << 1) | carry_left;
            let carry_right = if i + 1 < stride { row[i + 1] << 63 } else { 0 };
            let mut right = (w >> 1) | carry_right;
            if i + 1 == stride {
                // Pixel width-1 has no right neighbor.
                right &= last_mask >> 1;
            }
            out.words[y * stride + i] = w & left & right & up[i] & down[i];
        }
    }
    out
}

/// Tight inclusive box over set pixels; `None` for an empty mask.
pub fn mask_bbox(m: &BinaryMask) -> Option<PixelBox> {
    let mut bbox: Option<PixelBox> = None;
    for y in 0..m.height {
        let row = &m.words[y as usize * m.stride..(y as usize + 1) * m.stride];
        let first = row.iter().position(|&w| w != 0);
        let Some(first) = first else { continue };
        let last = row.iter().rposition(|&w| w != 0).expect("row has a set word");
        let x0 = first as u32 * 64 + row[first].trailing_zeros();
        let x1 = last as u32 * 64 + 63 - row[last].leading_zeros();
        bbox = Some(match bbox {
            None => PixelBox {
                xmin: x0,
                ymin: y,
                xmax: x1,
                ymax: y,
            },
            Some(b) => PixelBox {
                xmin: b.xmin.min(x0),
                ymin: b.ymin,
                xmax: b.xmax.max(x1),
                ymax: y,
            },
        });
    }
    bbox
}

/// Per-pixel camera-space depth in meters; `f32::INFINITY` marks empty pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    z: Vec<f32>,
}

impl DepthMap {
    pub const INVALID: f32 = f32::INFINITY;

    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            z: vec![Self::INVALID; width as usize * height as usize],
        }
    }

    /// Builds a depth map from meters; non-positive or non-finite values become invalid.
    pub fn from_meters(width: u32, height: u32, z: Vec<f32>) -> Result<Self, RasterError> {
        if z.len() != width as usize * height as usize {
            return Err(RasterError::BufferSize {
                expected: width as usize * height as usize,
                actual: z.len(),
            });
        }
        let z = z
            .into_iter()
            .map(|v| if v > 0.0 && v.is_finite() { v } else { Self::INVALID })
            .collect();
        Ok(Self { width, height, z })
    }

    /// Raw 16-bit sensor values times `depth_scale`; raw 0 is invalid.
    pub fn from_raw_u16(width: u32, height: u32, raw: &[u16], depth_scale: f64) -> Result<Self, RasterError> {
        let z = raw
            .iter()
            .map(|&r| if r == 0 { 0.0 } else { (r as f64 * depth_scale) as f32 })
            .collect();
        Self::from_meters(width, height, z)
    }

    /// Loads a 16-bit grayscale PNG depth image.
    pub fn load_png(path: &Path, depth_scale: f64) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|e| RasterError::Image(format!("{}: {e}", path.display())))?;
        let luma = img.to_luma16();
        let (w, h) = luma.dimensions();
        Self::from_raw_u16(w, h, luma.as_raw(), depth_scale)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let v = self.z[y as usize * self.width as usize + x as usize];
        (v != Self::INVALID).then_some(v)
    }

    #[inline]
    pub(crate) fn raw_mut(&mut self) -> &mut [f32] {
        &mut self.z
    }

    pub fn valid_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y).is_some())
    }

    pub fn valid_count(&self) -> usize {
        self.z.iter().filter(|&&v| v != Self::INVALID).count()
    }

    /// 16-bit PNG of `round(z / depth_scale)`, 0 where invalid.
    pub fn to_png_u16(&self, depth_scale: f64) -> Result<Vec<u8>, RasterError> {
        let mut data = Vec::with_capacity(self.z.len() * 2);
        for &v in &self.z {
            let raw = if v == Self::INVALID {
                0u16
            } else {
                (v as f64 / depth_scale).round().clamp(0.0, u16::MAX as f64) as u16
            };
            data.extend_from_slice(&raw.to_be_bytes());
        }
        encode_png(self.width, self.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
    }
}

/// Per-pixel object id, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    ids: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    pub(crate) fn ids_mut(&mut self) -> &mut [u16] {
        &mut self.ids
    }

    pub fn mask_of(&self, id: u16) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) == id)
    }

    pub fn nonzero_count(&self) -> usize {
        self.ids.iter().filter(|&&i| i != 0).count()
    }

    pub fn count_of(&self, id: u16) -> usize {
        self.ids.iter().filter(|&&i| i == id).count()
    }

    pub fn to_png_16bit(&self) -> Result<Vec<u8>, RasterError> {
        let data: Vec<u8> = self.ids.iter().flat_map(|v| v.to_be_bytes()).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
    }

    /// 8-bit id PNG; fails if any id exceeds 255.
    pub fn to_png_8bit(&self) -> Result<Vec<u8>, RasterError> {
        let data: Vec<u8> = self
            .ids
            .iter()
            .map(|&v| u8::try_from(v).map_err(|_| RasterError::IdOverflow(v)))
            .collect::<Result<_, _>>()?;
        encode_png(self.width, self.height, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<LabelMap, RasterError> {
        let img = image::load_from_memory(bytes).map_err(|e| RasterError::Image(e.to_string()))?;
        let luma = img.to_luma16();
        let (w, h) = luma.dimensions();
        let ids = match img {
            image::DynamicImage::ImageLuma8(ref g) => g.as_raw().iter().map(|&v| v as u16).collect(),
            _ => luma.into_raw(),
        };
        Ok(LabelMap {
            width: w,
            height: h,
            ids,
        })
    }
}
