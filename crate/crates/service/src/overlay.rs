//! Photograph + rendered silhouette or boundary compositing.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use labelkit_core::raster::{mask_boundary, BinaryMask};

pub const OVERLAY_COLOR: [u8; 3] = [0, 255, 0];
pub const BOUNDARY_THICKNESS: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayMode {
    Silhouette,
    Boundary,
}

impl std::str::FromStr for OverlayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "silhouette" => Ok(OverlayMode::Silhouette),
            "boundary" => Ok(OverlayMode::Boundary),
            _ => Err(format!("unknown overlay mode {s:?}")),
        }
    }
}

/// Pixels the overlay paints for `mode`.
pub fn overlay_mask(mask: &BinaryMask, mode: OverlayMode) -> BinaryMask {
    match mode {
        OverlayMode::Silhouette => mask.clone(),
        OverlayMode::Boundary => mask_boundary(mask, BOUNDARY_THICKNESS),
    }
}

/// Blends [`OVERLAY_COLOR`] into `photo` at every set pixel with weight `alpha`.
pub fn composite(photo: &mut RgbImage, painted: &BinaryMask, alpha: f64) {
    for (x, y) in painted.iter_set() {
        if x >= photo.width() || y >= photo.height() {
            continue;
        }
        let p = photo.get_pixel_mut(x, y);
        for c in 0..3 {
            let v = (1.0 - alpha) * p.0[c] as f64 + alpha * OVERLAY_COLOR[c] as f64;
            p.0[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
