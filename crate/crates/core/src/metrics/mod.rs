//! Pose-label quality metrics: positional and rotational error, ADD, ADD-S,
//! accuracy-threshold AUC and a feature-matching pixel distance.

mod feature;
mod kdtree;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quaternion_distance, GeometryError, RigidTransform};

pub use feature::{
    detect_corners, feature_pixel_distance, harris_response, Corner, FeatureConfig, FeatureMatchResult,
};
pub use kdtree::KdTree;

/// ADD-S switches from brute force to the kd-tree above this many points.
pub const ADDS_BRUTE_FORCE_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty point set")]
    EmptyPoints,
    #[error("empty error list")]
    EmptyErrors,
    #[error("invalid threshold grid: max {max}, steps {steps}")]
    InvalidGrid { max: f64, steps: usize },
    #[error("error values must not be NaN")]
    NanError,
    #[error("images differ in size: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("insufficient matches: {0} survived, need at least 8")]
    InsufficientMatches(usize),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorReport {
    pub positional: f64,
    pub rotational: f64,
    pub add: f64,
    pub adds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub thresholds: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub auc: f64,
}

pub fn positional_error(t: &Vector3<f64>, t_star: &Vector3<f64>) -> f64 {
    (t - t_star).norm()
}

/// `min(‖q − q*‖, ‖q + q*‖)` on `(w, x, y, z)` unit quaternions.
pub fn rotational_error(q: [f64; 4], q_star: [f64; 4]) -> Result<f64, MetricsError> {
    Ok(quaternion_distance(q, q_star)?)
}

/// Points mapped by `pose` as `R x + t` with the rotation matrix; every metric
/// here uses this one transform so results are reproducible bit for bit.
pub fn transform_points(points: &[Vector3<f64>], pose: &RigidTransform) -> Vec<Vector3<f64>> {
    let r = pose.rotation_matrix();
    let t = *pose.translation();
    points.iter().map(|x| r * x + t).collect()
}

/// Mean over points of `‖pose(x) − pose*(x)‖`, summed in input order.
pub fn add_error(points: &[Vector3<f64>], pose: &RigidTransform, pose_star: &RigidTransform) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyPoints);
    }
    let a = transform_points(points, pose);
    let b = transform_points(points, pose_star);
    let mut sum = 0.0;
    for (p, q) in a.iter().zip(&b) {
        sum += (p - q).norm();
    }
    Ok(sum / points.len() as f64)
}

/// Mean over `x1` of `min over x2` of `‖pose(x1) − pose*(x2)‖`. Exact at every
/// size: brute force up to [`ADDS_BRUTE_FORCE_LIMIT`] points, kd-tree above.
pub fn adds_error(points: &[Vector3<f64>], pose: &RigidTransform, pose_star: &RigidTransform) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyPoints);
    }
    let a = transform_points(points, pose);
    let b = transform_points(points, pose_star);
    let mut sum = 0.0;
    if points.len() <= ADDS_BRUTE_FORCE_LIMIT {
        for p in &a {
            let mut best = f64::INFINITY;
            for q in &b {
                let d = (p - q).norm();
                if d < best {
                    best = d;
                }
            }
            sum += best;
        }
    } else {
        use rayon::prelude::*;
        let tree = KdTree::new(&b);
        let mins: Vec<f64> = a.par_iter().map(|p| tree.nearest_distance(p).expect("non-empty")).collect();
        for m in mins {
            sum += m;
        }
    }
    Ok(sum / points.len() as f64)
}

pub fn pose_errors(
    points: &[Vector3<f64>],
    pose: &RigidTransform,
    pose_star: &RigidTransform,
) -> Result<PoseErrorReport, MetricsError> {
    Ok(PoseErrorReport {
        positional: positional_error(pose.translation(), pose_star.translation()),
        rotational: rotational_error(pose.wxyz(), pose_star.wxyz())?,
        add: add_error(points, pose, pose_star)?,
        adds: adds_error(points, pose, pose_star)?,
    })
}

/// Accuracy at `n_steps` evenly spaced thresholds `max · i / (n_steps − 1)` and
/// the trapezoidal area under it, normalized by `max_threshold`.
pub fn accuracy_auc(errors: &[f64], max_threshold: f64, n_steps: usize) -> Result<AccuracyCurve, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyErrors);
    }
    if !(max_threshold > 0.0 && max_threshold.is_finite()) || n_steps < 2 {
        return Err(MetricsError::InvalidGrid {
            max: max_threshold,
            steps: n_steps,
        });
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(MetricsError::NanError);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let thresholds: Vec<f64> = (0..n_steps)
        .map(|i| max_threshold * (i as f64 / (n_steps - 1) as f64))
        .collect();
    let accuracies: Vec<f64> = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    let mut area = 0.0;
    for i in 0..n_steps - 1 {
        area += (thresholds[i + 1] - thresholds[i]) * (accuracies[i] + accuracies[i + 1]) / 2.0;
    }
    Ok(AccuracyCurve {
        auc: (area / max_threshold).clamp(0.0, 1.0),
        thresholds,
        accuracies,
    })
}
