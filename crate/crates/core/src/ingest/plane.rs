//! Robust plane fitting and alignment of a plane to z = 0.

use nalgebra::{Matrix3, SymmetricEigen, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::geometry::RigidTransform;

/// Plane `normal · x = offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_indices: Vec<usize>,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn inliers(points: &[Vector3<f64>], n: &Vector3<f64>, d: f64, tol: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (n.dot(p) - d).abs() <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Total least squares plane through `points[idx]`: centroid and the
/// eigenvector of the smallest covariance eigenvalue.
fn least_squares(points: &[Vector3<f64>], idx: &[usize]) -> (Vector3<f64>, f64) {
    let c = idx.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / idx.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let d = points[i] - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (min_i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("3 eigenvalues");
    let n = eig.eigenvectors.column(min_i).normalize();
    (n, n.dot(&c))
}

/// RANSAC plane fit with deterministic sampling from `seed`.
///
/// The best-supported hypothesis is refined by least squares over its inliers,
/// and the inlier set is then recomputed against the refined plane. The normal
/// points toward the side holding more points beyond the tolerance band; for a
/// balanced cloud it points away from the origin.
pub fn fit_plane_ransac(
    points: &[Vector3<f64>],
    inlier_tol: f64,
    iterations: usize,
    seed: u64,
) -> Result<PlaneModel, IngestError> {
    let n_pts = points.len();
    if n_pts < 3 {
        return Err(IngestError::TooFewPoints(n_pts));
    }
    let extent = points.iter().fold(0.0f64, |m, p| m.max(p.amax()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..iterations.max(1) {
        let i = rng.random_range(0..n_pts);
        let mut j = rng.random_range(0..n_pts - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n_pts - 2);
        for m in [i.min(j), i.max(j)] {
            if k >= m {
                k += 1;
            }
        }
        let cross = (points[j] - points[i]).cross(&(points[k] - points[i]));
        let norm = cross.norm();
        if !(norm > 1e-12 * extent.max(1.0).powi(2)) {
            continue;
        }
        let n = cross / norm;
        let d = n.dot(&points[i]);
        let count = points.iter().filter(|p| (n.dot(p) - d).abs() <= inlier_tol).count();
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, n, d));
        }
    }
    let (_, n0, d0) = best.ok_or(IngestError::Collinear(iterations.max(1)))?;
    let seed_inliers = inliers(points, &n0, d0, inlier_tol);
    let (mut n, mut d) = if seed_inliers.len() >= 3 {
        least_squares(points, &seed_inliers)
    } else {
        (n0, d0)
    };
    // Points within tolerance sit on both sides, so only the clear ones vote.
    let above = points.iter().filter(|p| n.dot(p) - d > inlier_tol).count();
    let below = points.iter().filter(|p| n.dot(p) - d < -inlier_tol).count();
    let flip = match above.cmp(&below) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal if d != 0.0 => d < 0.0,
        std::cmp::Ordering::Equal => {
            let (i, _) = n.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).expect("3 components");
            n[i] < 0.0
        }
    };
    if flip {
        n = -n;
        d = -d;
    }
    Ok(PlaneModel {
        inlier_indices: inliers(points, &n, d, inlier_tol),
        normal: n,
        offset: d,
    })
}

/// Rigid transform taking the plane to z = 0 with its normal along +z, using
/// the minimal rotation about `normal × z`.
pub fn xy_alignment_transform(plane: &PlaneModel) -> RigidTransform {
    let n = plane.normal.normalize();
    let z = Vector3::z();
    let q = UnitQuaternion::rotation_between(&n, &z).unwrap_or_else(|| {
        // Antiparallel: any half turn about an axis in the plane works.
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::x()), std::f64::consts::PI)
    });
    // A point on the plane maps to height `offset` after rotation.
    RigidTransform::new(q, Vector3::new(0.0, 0.0, -plane.offset))
}
