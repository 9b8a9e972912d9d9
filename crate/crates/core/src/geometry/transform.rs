use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GeometryError;

/// Tolerance used when accepting externally supplied quaternions.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

/// A rigid transform in SE(3): `x -> R x + t`.
///
/// The rotation is kept as a unit quaternion in canonical form (`w >= 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Builds a transform from raw `(w, x, y, z)` quaternion components.
    ///
    /// Components whose norm is within [`QUATERNION_NORM_TOLERANCE`] of one are
    /// renormalized; anything further off is rejected.
    pub fn from_wxyz(wxyz: [f64; 4], translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion(norm));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        // Already-unit input is kept bit for bit so serialized poses round-trip exactly.
        let q = if (norm - 1.0).abs() <= 2.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self::new(q, translation))
    }

    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Canonical quaternion components `(w, x, y, z)` with `w >= 0`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: the result applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform::new(inv, -(inv * self.translation))
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> RigidTransform {
        RigidTransform::new(self.rotation, translation)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }

    /// Camera-to-world pose of a camera at `eye` whose +z axis points at `target`.
    ///
    /// Camera frame is +x right, +y down, +z forward. `up` only selects the roll;
    /// the camera's +y axis points away from it.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = target - eye;
        let fnorm = forward.norm();
        if fnorm < 1e-12 || !fnorm.is_finite() {
            return Err(GeometryError::Degenerate("look_at target coincides with eye".into()));
        }
        let z = forward / fnorm;
        let mut hint = up;
        if hint.cross(&z).norm() < 1e-6 {
            hint = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        }
        let y = (-hint + z * hint.dot(&z)).normalize();
        let x = y.cross(&z);
        let r = Matrix3::from_columns(&[x, y, z]);
        Ok(Self::from_matrix(&r, eye))
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.wxyz(),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        RigidTransform::from_wxyz(repr.rotation, Vector3::from(repr.translation))
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn identity_acts_trivially() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().apply_point(&p), p);
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn translation_inverse() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert!(close(t.inverse().translation(), &Vector3::new(-1.0, -2.0, -3.0), 0.0));
        let moved = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(moved.apply_point(&Vector3::zeros()), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn half_turn_about_x_is_self_inverse() {
        // R = diag(1,-1,-1), t = (0,0,1): t' = -R^T t = (0,0,1).
        let t = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI),
            Vector3::new(0.0, 0.0, 1.0),
        );
        let inv = t.inverse();
        assert!(close(inv.translation(), &Vector3::new(0.0, 0.0, 1.0), 1e-12));
        let r = inv.rotation_matrix();
        assert!((r - Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).norm() < 1e-12);
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0));
        let m = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let p = Vector3::new(1.0, 0.0, 0.0);
        assert!(close(&t.apply_point(&p), &(m * p), 1e-15));
        assert!(close(&t.apply_point(&p), &Vector3::new(0.0, 1.0, 0.0), 1e-15));
    }

    #[test]
    fn canonical_sign() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(-0.5, 0.5, 0.5, 0.5));
        let t = RigidTransform::from_rotation(q);
        assert!(t.wxyz()[0] >= 0.0);
        assert_eq!(t.wxyz(), [0.5, -0.5, -0.5, -0.5]);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        assert!(matches!(
            RigidTransform::from_wxyz([1.0, 1.0, 0.0, 0.0], Vector3::zeros()),
            Err(GeometryError::NonUnitQuaternion(_))
        ));
        assert!(RigidTransform::from_wxyz([1.0 + 1e-8, 0.0, 0.0, 0.0], Vector3::zeros()).is_ok());
    }

    #[test]
    fn look_at_points_z_at_target() {
        let eye = Vector3::new(1.0, 2.0, 3.0);
        let cam = RigidTransform::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap();
        let z_world = cam.apply_vector(&Vector3::z());
        assert!(close(&z_world, &(-eye.normalize()), 1e-12));
        assert!((cam.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
        // +y (down in the image) points away from world up.
        assert!(cam.apply_vector(&Vector3::y()).z < 0.0);
    }

    #[test]
    fn serde_round_trip() {
        let t = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.1, -0.4, 2.0),
            Vector3::new(0.25, -1.0, 3.5),
        );
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert!(close(back.translation(), t.translation(), 0.0));
        assert!(back.rotation().angle_to(t.rotation()) < 1e-12);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-10.0f64..10.0)).prop_map(|(r, t)| {
            RigidTransform::new(UnitQuaternion::from_scaled_axis(Vector3::from(r)), Vector3::from(t))
        })
    }

    fn arb_point() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-10.0f64..10.0).prop_map(Vector3::from)
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(a in arb_transform(), p in arb_point()) {
            let id = a.compose(&a.inverse());
            prop_assert!(close(&id.apply_point(&p), &p, 1e-9));
            prop_assert!(id.rotation().angle() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn compose_acts_pointwise(a in arb_transform(), b in arb_transform(), p in arb_point()) {
            let lhs = a.compose(&b).apply_point(&p);
            let rhs = a.apply_point(&b.apply_point(&p));
            prop_assert!(close(&lhs, &rhs, 1e-9));
        }

        #[test]
        fn transforms_are_rigid(a in arb_transform(), p in arb_point(), q in arb_point()) {
            let d = (a.apply_point(&p) - a.apply_point(&q)).norm();
            prop_assert!((d - (p - q).norm()).abs() < 1e-9);
            prop_assert!(a.wxyz()[0] >= 0.0);
            prop_assert!((a.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn json_round_trip_is_exact(a in arb_transform()) {
            let back: RigidTransform = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            prop_assert_eq!(back, a);
        }
    }
}
