//! SE(3) transforms, twists, the pinhole camera, quaternion distance and meshes.
//!
//! Conventions used across the crate:
//! - quaternions are `(w, x, y, z)`, canonicalized to `w >= 0`;
//! - the camera frame is +x right, +y down, +z forward;
//! - poses of cameras are camera-to-world.

mod camera;
mod mesh;
pub mod shapes;
mod transform;
mod twist;

use nalgebra::UnitQuaternion;
use thiserror::Error;

pub use camera::{CameraIntrinsics, PROJECTION_NEAR};
pub use mesh::{parse_obj, parse_ply, point_set_diameter, TriangleMesh, BRUTE_FORCE_DIAMETER_LIMIT};
pub use transform::{RigidTransform, QUATERNION_NORM_TOLERANCE};
pub use twist::{exp_twist, TwistCoordinates};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("quaternion norm {0} is not 1")]
    NonUnitQuaternion(f64),
    #[error("rotation axis must be unit length, got norm {0}")]
    NonUnitAxis(f64),
    #[error("rotation axis must be nonzero")]
    ZeroAxis,
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        vertex_count: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const UNIT_QUATERNION_TOLERANCE: f64 = 1e-9;

/// `min(‖q − q*‖, ‖q + q*‖)` for quaternions given as `(w, x, y, z)`.
///
/// Both inputs must be unit length within 1e-9. The result lies in `[0, √2]`.
pub fn quaternion_distance(q: [f64; 4], q_star: [f64; 4]) -> Result<f64, GeometryError> {
    for c in [&q, &q_star] {
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_QUATERNION_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion(n));
        }
    }
    let diff = (0..4).map(|i| (q[i] - q_star[i]).powi(2)).sum::<f64>().sqrt();
    let sum = (0..4).map(|i| (q[i] + q_star[i]).powi(2)).sum::<f64>().sqrt();
    Ok(diff.min(sum))
}

pub fn unit_quaternion_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}
