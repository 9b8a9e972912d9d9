use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, RigidTransform};

const UNIT_TOLERANCE: f64 = 1e-9;

/// Twist coordinates `(v, ω)` of an SE(3) motion generator.
///
/// `ω` is either zero (pure translation along `v`) or a unit rotation axis,
/// in which case the magnitude passed to [`exp_twist`] is an angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistCoordinates {
    v: Vector3<f64>,
    omega: Vector3<f64>,
}

impl TwistCoordinates {
    pub fn new(v: Vector3<f64>, omega: Vector3<f64>) -> Result<Self, GeometryError> {
        if !v.iter().chain(omega.iter()).all(|c| c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let n = omega.norm();
        if n != 0.0 && (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(GeometryError::NonUnitAxis(n));
        }
        Ok(Self { v, omega })
    }

    /// Pure translation twist `[v; 0]`.
    pub fn translation(v: Vector3<f64>) -> Self {
        Self {
            v,
            omega: Vector3::zeros(),
        }
    }

    /// Rotation screw about the axis with direction `omega` passing through `center`:
    /// `[-ω × center; ω]`.
    pub fn about_axis(omega: Vector3<f64>, center: Vector3<f64>) -> Result<Self, GeometryError> {
        if omega.norm() == 0.0 {
            return Err(GeometryError::ZeroAxis);
        }
        Self::new(-omega.cross(&center), omega)
    }

    pub fn v(&self) -> &Vector3<f64> {
        &self.v
    }

    pub fn omega(&self) -> &Vector3<f64> {
        &self.omega
    }

    pub fn is_pure_translation(&self) -> bool {
        self.omega == Vector3::zeros()
    }
}

/// Matrix exponential `exp(ξ̂ θ)` of a twist.
///
/// Rotation part by Rodrigues' formula, translation `(I - R)(ω × v) + ω ωᵀ v θ`.
pub fn exp_twist(xi: &TwistCoordinates, theta: f64) -> RigidTransform {
    if theta == 0.0 {
        return RigidTransform::identity();
    }
    if xi.is_pure_translation() {
        return RigidTransform::from_translation(xi.v * theta);
    }
    let axis = Unit::new_unchecked(xi.omega);
    let rotation = UnitQuaternion::from_axis_angle(&axis, theta);
    let w_cross_v = xi.omega.cross(&xi.v);
    let translation =
        (w_cross_v - rotation * w_cross_v) + xi.omega * (xi.omega.dot(&xi.v) * theta);
    RigidTransform::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Rodrigues rotation matrix built independently of nalgebra's quaternion path.
    fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let k = Matrix3::new(0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0);
        Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
    }

    #[test]
    fn pure_translation() {
        let xi = TwistCoordinates::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).unwrap();
        let t = exp_twist(&xi, 0.5);
        assert_eq!(t.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(*t.translation(), Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let xi = TwistCoordinates::new(Vector3::new(3.0, -1.0, 2.0), Vector3::y()).unwrap();
        assert_eq!(exp_twist(&xi, 0.0), RigidTransform::identity());
    }

    #[test]
    fn half_turn_about_offset_vertical_axis() {
        let xi = TwistCoordinates::new(Vector3::new(0.0, -1.0, 0.0), Vector3::z()).unwrap();
        let p = exp_twist(&xi, PI).apply_point(&Vector3::new(2.0, 0.0, 0.0));
        assert!(p.norm() < 1e-12, "{p:?}");
    }

    #[test]
    fn about_axis_construction() {
        let xi = TwistCoordinates::about_axis(Vector3::z(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(*xi.v(), Vector3::new(0.0, -1.0, 0.0));
        assert_eq!(*xi.omega(), Vector3::z());
        let on_axis = TwistCoordinates::about_axis(Vector3::z(), Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(on_axis.v().norm(), 0.0);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(matches!(
            TwistCoordinates::about_axis(Vector3::zeros(), Vector3::x()),
            Err(GeometryError::ZeroAxis)
        ));
        assert!(matches!(
            TwistCoordinates::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 2.0)),
            Err(GeometryError::NonUnitAxis(_))
        ));
    }

    fn unit_vec() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn screw_fixes_its_center(omega in unit_vec(), center in vec3(10.0), theta in -10.0..10.0f64) {
            let xi = TwistCoordinates::about_axis(omega, center).unwrap();
            let moved = exp_twist(&xi, theta).apply_point(&center);
            // Oracle: R (c - c) + c = c.
            let oracle = rodrigues(&omega, theta) * (center - center) + center;
            prop_assert!((moved - oracle).norm() < 1e-9);
        }

        #[test]
        fn screw_matches_rotation_about_center(omega in unit_vec(), center in vec3(5.0), p in vec3(5.0), theta in -4.0..4.0f64) {
            let xi = TwistCoordinates::about_axis(omega, center).unwrap();
            let moved = exp_twist(&xi, theta).apply_point(&p);
            let oracle = rodrigues(&omega, theta) * (p - center) + center;
            prop_assert!((moved - oracle).norm() < 1e-9);
        }
    }
}
