//! Pose edit requests and their application to world-frame object poses.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use labelkit_core::geometry::{exp_twist, RigidTransform, TwistCoordinates};

/// Frame in which a delta's direction or axis is expressed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSpace {
    World,
    /// Axes of the given frame's camera.
    Camera(u32),
    /// Camera axes, but translations keep the object's distance to the camera
    /// center (drag along the view sphere). Rotations behave as in `Camera`.
    CameraRay(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Translate,
    Rotate,
}

/// `"+x"`, `"-z"`, `"y"` or an explicit 3-vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Named(String),
    Vector([f64; 3]),
}

impl AxisSpec {
    pub fn unit_vector(&self) -> Result<Vector3<f64>, String> {
        let v = match self {
            AxisSpec::Vector(v) => Vector3::from(*v),
            AxisSpec::Named(s) => {
                let (sign, name) = match s.as_bytes().first() {
                    Some(b'-') => (-1.0, &s[1..]),
                    Some(b'+') => (1.0, &s[1..]),
                    _ => (1.0, s.as_str()),
                };
                let base = match name {
                    "x" => Vector3::x(),
                    "y" => Vector3::y(),
                    "z" => Vector3::z(),
                    _ => return Err(format!("unknown axis {s:?}")),
                };
                base * sign
            }
        };
        let n = v.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err("axis must be a finite nonzero vector".into());
        }
        Ok(v / n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoseUpdate {
    Absolute {
        pose: RigidTransform,
        #[serde(default)]
        expected_version: Option<u64>,
    },
    Delta {
        space: DeltaSpace,
        motion: Motion,
        /// Translation direction or rotation axis.
        axis: AxisSpec,
        /// Meters for translations, radians for rotations.
        magnitude: f64,
        #[serde(default)]
        expected_version: Option<u64>,
    },
}

impl PoseUpdate {
    pub fn expected_version(&self) -> Option<u64> {
        match self {
            PoseUpdate::Absolute { expected_version, .. } | PoseUpdate::Delta { expected_version, .. } => {
                *expected_version
            }
        }
    }
}

/// Applies a delta as a left-composed twist motion on the world pose: a pure
/// translation along the direction, or a rotation about the axis through the
/// object's origin. `camera_to_world` must be given for camera spaces.
pub fn apply_delta(
    pose: &RigidTransform,
    space: DeltaSpace,
    motion: Motion,
    axis: &AxisSpec,
    magnitude: f64,
    camera_to_world: Option<&RigidTransform>,
) -> Result<RigidTransform, String> {
    if !magnitude.is_finite() {
        return Err("magnitude must be finite".into());
    }
    let local = axis.unit_vector()?;
    let (dir, cam) = match space {
        DeltaSpace::World => (local, None),
        DeltaSpace::Camera(_) | DeltaSpace::CameraRay(_) => {
            let c = camera_to_world.ok_or("camera pose required")?;
            (c.apply_vector(&local), Some(c))
        }
    };
    let xi = match motion {
        Motion::Rotate => TwistCoordinates::about_axis(dir, *pose.translation()).map_err(|e| e.to_string())?,
        Motion::Translate => {
            if let (DeltaSpace::CameraRay(_), Some(c)) = (space, cam) {
                let center = *c.translation();
                let rel = pose.translation() - center;
                let moved = rel + dir * magnitude;
                if moved.norm() < 1e-12 {
                    return Err("drag would collapse onto the camera center".into());
                }
                let target = center + moved.normalize() * rel.norm();
                return Ok(pose.with_translation(target));
            }
            TwistCoordinates::translation(dir)
        }
    };
    Ok(exp_twist(&xi, magnitude).compose(pose))
}
