//! Truncated signed distance fusion of depth images and zero-crossing extraction.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::raster::DepthMap;

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("depth map is {depth:?} but intrinsics are {camera:?}")]
    DimensionMismatch { depth: (u32, u32), camera: (u32, u32) },
}

/// Dense voxel grid. Voxel `(i, j, k)` sits at `origin + voxel_size · (i, j, k)`.
///
/// Values are signed distance over truncation, clamped to `[-1, 1]`, positive in
/// front of the observed surface. A zero weight means unobserved.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    truncation: f64,
    values: Vec<f64>,
    weights: Vec<f64>,
}

pub fn create_volume(
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    truncation: f64,
) -> Result<TsdfVolume, TsdfError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(TsdfError::InvalidVolume(format!("voxel size {voxel_size} must be positive")));
    }
    if !(truncation >= voxel_size && truncation.is_finite()) {
        return Err(TsdfError::InvalidVolume(format!(
            "truncation {truncation} must be at least the voxel size {voxel_size}"
        )));
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(TsdfError::InvalidVolume(format!("dims {dims:?} must each be at least 2")));
    }
    if !origin.iter().all(|v| v.is_finite()) {
        return Err(TsdfError::InvalidVolume("origin must be finite".into()));
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .filter(|&n| n <= 1 << 31)
        .ok_or_else(|| TsdfError::InvalidVolume(format!("dims {dims:?} are too large")))?;
    Ok(TsdfVolume {
        origin,
        voxel_size,
        dims,
        truncation,
        values: vec![0.0; n],
        weights: vec![0.0; n],
    })
}

impl TsdfVolume {
    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// `dims · voxel_size` per axis.
    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// `(value, weight)` of a voxel.
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> (f64, f64) {
        let idx = self.index(i, j, k);
        (self.values[idx], self.weights[idx])
    }

    pub fn observed_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Bounding box of all voxel positions.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let [nx, ny, nz] = self.dims;
        (self.origin, self.voxel_position(nx - 1, ny - 1, nz - 1))
    }
}

/// Projective TSDF update of every voxel from one depth image.
///
/// Voxels behind the camera, outside the image, on invalid depth or more than
/// `truncation` behind the observed surface are left untouched.
pub fn integrate_depth(
    vol: &mut TsdfVolume,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    cam_to_world: &RigidTransform,
) -> Result<(), TsdfError> {
    if (depth.width(), depth.height()) != (k.width, k.height) {
        return Err(TsdfError::DimensionMismatch {
            depth: (depth.width(), depth.height()),
            camera: (k.width, k.height),
        });
    }
    let world_to_cam = cam_to_world.inverse();
    let r = world_to_cam.rotation_matrix();
    let t = *world_to_cam.translation();
    let [nx, ny, _] = vol.dims;
    let (origin, vs, trunc) = (vol.origin, vol.voxel_size, vol.truncation);
    let (w, h) = (k.width as f64, k.height as f64);
    let slice = nx * ny;
    vol.values
        .par_chunks_mut(slice)
        .zip(vol.weights.par_chunks_mut(slice))
        .enumerate()
        .for_each(|(kz, (values, weights))| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = origin + Vector3::new(i as f64, j as f64, kz as f64) * vs;
                    let c = r * p + t;
                    if c.z <= 0.0 {
                        continue;
                    }
                    let u = k.fx * c.x / c.z + k.cx;
                    let v = k.fy * c.y / c.z + k.cy;
                    if !(u >= 0.0 && v >= 0.0 && u < w && v < h) {
                        continue;
                    }
                    let Some(d) = depth.get(u as u32, v as u32) else { continue };
                    let sdf = d as f64 - c.z;
                    if sdf < -trunc {
                        continue;
                    }
                    let sample = (sdf / trunc).clamp(-1.0, 1.0);
                    let idx = i + nx * j;
                    let wt = weights[idx];
                    values[idx] = (values[idx] * wt + sample) / (wt + 1.0);
                    weights[idx] = wt + 1.0;
                }
            }
        });
    Ok(())
}

/// Zero crossings between axis-adjacent observed voxels of opposite sign,
/// located by linear interpolation. Ordered by voxel index, then axis.
pub fn extract_surface_points(vol: &TsdfVolume) -> Vec<Vector3<f64>> {
    let [nx, ny, nz] = vol.dims;
    (0..nz)
        .into_par_iter()
        .flat_map_iter(|kz| {
            let mut out = Vec::new();
            for j in 0..ny {
                for i in 0..nx {
                    let a_idx = vol.index(i, j, kz);
                    if vol.weights[a_idx] <= 0.0 {
                        continue;
                    }
                    let a = vol.values[a_idx];
                    let here = vol.voxel_position(i, j, kz);
                    for (axis, (ii, jj, kk)) in [(i + 1, j, kz), (i, j + 1, kz), (i, j, kz + 1)].into_iter().enumerate() {
                        if ii >= nx || jj >= ny || kk >= nz {
                            continue;
                        }
                        let b_idx = vol.index(ii, jj, kk);
                        if vol.weights[b_idx] <= 0.0 {
                            continue;
                        }
                        let b = vol.values[b_idx];
                        if (a >= 0.0) == (b >= 0.0) {
                            continue;
                        }
                        let t = a / (a - b);
                        let mut p = here;
                        p[axis] += t * vol.voxel_size;
                        out.push(p);
                    }
                }
            }
            out
        })
        .collect()
}

/// ASCII PLY point cloud.
pub fn points_to_ply(points: &[Vector3<f64>]) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    );
    for p in points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}
