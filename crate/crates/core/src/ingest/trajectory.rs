//! TUM trajectory and COLMAP text model parsers.
//!
//! All poses returned here are camera-to-world. COLMAP stores world-to-camera,
//! which is inverted at this boundary.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::{IngestError, SparseTrack};
use crate::geometry::RigidTransform;

/// Quaternions further than this from unit norm are rejected; closer ones are
/// renormalized with a warning.
pub const TRAJECTORY_QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub camera_to_world: RigidTransform,
}

fn parse_num(tok: &str, line: usize) -> Result<f64, IngestError> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| IngestError::Parse {
        line,
        message: format!("non-numeric field '{tok}'"),
    })
}

fn pose_from_parts(wxyz: [f64; 4], t: Vector3<f64>, line: usize) -> Result<RigidTransform, IngestError> {
    let norm = wxyz.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > TRAJECTORY_QUATERNION_TOLERANCE {
        return Err(IngestError::Parse {
            line,
            message: format!("quaternion norm {norm} is not unit"),
        });
    }
    if (norm - 1.0).abs() > 1e-9 {
        log::warn!("line {line}: renormalizing quaternion with norm {norm}");
    }
    let q = wxyz.map(|v| v / norm);
    RigidTransform::from_wxyz(q, t).map_err(|e| IngestError::Parse {
        line,
        message: e.to_string(),
    })
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines; `#` lines and blank lines are skipped.
pub fn parse_tum_trajectory(text: &str) -> Result<Vec<TimedPose>, IngestError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(IngestError::Parse {
                line,
                message: format!("expected 8 fields, found {}", toks.len()),
            });
        }
        let v: Vec<f64> = toks.iter().map(|t| parse_num(t, line)).collect::<Result<_, _>>()?;
        let pose = pose_from_parts([v[7], v[4], v[5], v[6]], Vector3::new(v[1], v[2], v[3]), line)?;
        out.push(TimedPose {
            timestamp: v[0],
            camera_to_world: pose,
        });
    }
    Ok(out)
}

/// Writes poses in TUM format with full round-trip precision.
pub fn serialize_tum(poses: &[TimedPose]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.camera_to_world.translation();
        let [w, x, y, z] = p.camera_to_world.wxyz();
        out.push_str(&format!(
            "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}\n",
            p.timestamp, t.x, t.y, t.z, x, y, z, w
        ));
    }
    out
}

/// One image record of a COLMAP `images.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColmapImage {
    pub image_id: u32,
    pub camera_id: u32,
    pub name: String,
    pub camera_to_world: RigidTransform,
    /// Keypoints `(x, y, POINT3D_ID)`; `None` when the line could not be parsed.
    pub points2d: Option<Vec<(f64, f64, i64)>>,
}

/// Parses COLMAP `images.txt`: a metadata line
/// `IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME` followed by a points2D line.
pub fn parse_colmap_images(text: &str) -> Result<Vec<ColmapImage>, IngestError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim_start().starts_with('#'));
    while let Some((idx, raw)) = lines.next() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() < 10 {
            return Err(IngestError::Parse {
                line,
                message: format!("image line needs 10 fields, found {}", toks.len()),
            });
        }
        let image_id: u32 = toks[0].parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("invalid IMAGE_ID '{}'", toks[0]),
        })?;
        let camera_id: u32 = toks[8].parse().map_err(|_| IngestError::Parse {
            line,
            message: format!("invalid CAMERA_ID '{}'", toks[8]),
        })?;
        let v: Vec<f64> = toks[1..8].iter().map(|t| parse_num(t, line)).collect::<Result<_, _>>()?;
        let world_to_cam = pose_from_parts([v[0], v[1], v[2], v[3]], Vector3::new(v[4], v[5], v[6]), line)?;
        let name = toks[9..].join(" ");
        let (_, pts_raw) = lines.next().ok_or(IngestError::Parse {
            line,
            message: "image line without a following points2D line".into(),
        })?;
        let nums: Option<Vec<f64>> = pts_raw.split_whitespace().map(|t| t.parse::<f64>().ok()).collect();
        let points2d = nums.filter(|n| n.len() % 3 == 0).map(|n| {
            n.chunks(3).map(|c| (c[0], c[1], c[2] as i64)).collect::<Vec<_>>()
        });
        out.push(ColmapImage {
            image_id,
            camera_id,
            name,
            camera_to_world: world_to_cam.inverse(),
            points2d,
        });
    }
    Ok(out)
}

/// Parses COLMAP `points3D.txt` and resolves each track element
/// `(IMAGE_ID, POINT2D_IDX)` to a pixel through `images`.
///
/// Observation frame ids are COLMAP image ids.
pub fn parse_colmap_points3d(text: &str, images: &[ColmapImage]) -> Result<Vec<SparseTrack>, IngestError> {
    let by_id: HashMap<u32, &ColmapImage> = images.iter().map(|im| (im.image_id, im)).collect();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() < 8 || (toks.len() - 8) % 2 != 0 {
            return Err(IngestError::Parse {
                line,
                message: "point line needs ID X Y Z R G B ERROR followed by track pairs".into(),
            });
        }
        let p = Vector3::new(parse_num(toks[1], line)?, parse_num(toks[2], line)?, parse_num(toks[3], line)?);
        let mut observations = Vec::new();
        for pair in toks[8..].chunks(2) {
            let bad = || IngestError::Parse {
                line,
                message: format!("invalid track element '{} {}'", pair[0], pair[1]),
            };
            let image_id: u32 = pair[0].parse().map_err(|_| bad())?;
            let point_idx: usize = pair[1].parse().map_err(|_| bad())?;
            let image = by_id.get(&image_id).ok_or(IngestError::Parse {
                line,
                message: format!("track references unknown image {image_id}"),
            })?;
            let pts = image.points2d.as_ref().ok_or(IngestError::Parse {
                line,
                message: format!("image {image_id} has no parsable points2D line"),
            })?;
            let &(u, v, _) = pts.get(point_idx).ok_or(IngestError::Parse {
                line,
                message: format!("image {image_id} has no keypoint {point_idx}"),
            })?;
            observations.push((image_id, u, v));
        }
        if observations.is_empty() {
            continue;
        }
        out.push(SparseTrack {
            point_world: p,
            observations,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    #[test]
    fn tum_identity_line() {
        let poses = parse_tum_trajectory("1305031102.1758 1.0 2.0 3.0 0.0 0.0 0.0 1.0").unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(*poses[0].camera_to_world.translation(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(poses[0].camera_to_world.wxyz(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(poses[0].timestamp, 1305031102.1758);
    }

    #[test]
    fn tum_comments_and_errors() {
        assert!(parse_tum_trajectory("# comment\n\n").unwrap().is_empty());
        match parse_tum_trajectory("# header\n1 2 3 4 0 0 0\n") {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_tum_trajectory("1 2 3 4 0 0 x 1\n"),
            Err(IngestError::Parse { line: 1, .. })
        ));
        assert!(parse_tum_trajectory("1 0 0 0 0 0 0 1.2\n").is_err());
        let renorm = parse_tum_trajectory("1 0 0 0 0 0 0 1.0005\n").unwrap();
        assert_eq!(renorm[0].camera_to_world.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn colmap_identity_and_half_turn() {
        let text = "# Image list\n1 1 0 0 0 0 0 0 1 a.png\n10.0 20.0 -1\n2 0 1 0 0 0 0 1 1 b.png\n\n";
        let images = parse_colmap_images(text).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(images[0].camera_to_world, RigidTransform::identity());
        assert_eq!(images[0].name, "a.png");
        assert_eq!(images[0].points2d.as_deref(), Some(&[(10.0, 20.0, -1)][..]));
        let b = &images[1];
        assert_eq!(b.name, "b.png");
        assert!((b.camera_to_world.translation() - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let r = b.camera_to_world.rotation_matrix();
        assert!((r - Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).norm() < 1e-12);
        assert!(b.points2d.as_ref().unwrap().is_empty());
    }

    #[test]
    fn colmap_errors() {
        assert!(parse_colmap_images("1 1 0 0 0 0 0 0 1 a.png\n").is_err());
        assert!(parse_colmap_images("1 1 0 0 0 0 0 0 1\n\n").is_err());
        assert!(parse_colmap_images("1 2 0 0 0 0 0 0 1 a.png\n\n").is_err());
        let garbage = parse_colmap_images("1 1 0 0 0 0 0 0 1 a.png\nnot numbers here\n").unwrap();
        assert_eq!(garbage[0].points2d, None);
    }

    #[test]
    fn points3d_resolves_pixels() {
        let images = parse_colmap_images("1 1 0 0 0 0 0 0 1 a.png\n5 6 0 7.5 8.5 0\n").unwrap();
        let tracks = parse_colmap_points3d("# pts\n0 0.1 0.2 1.5 255 0 0 0.3 1 1 1 0\n", &images).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].point_world, Vector3::new(0.1, 0.2, 1.5));
        assert_eq!(tracks[0].observations, vec![(1, 7.5, 8.5), (1, 5.0, 6.0)]);
        assert!(parse_colmap_points3d("0 0 0 1 0 0 0 0 9 0\n", &images).is_err());
    }

    proptest! {
        #[test]
        fn tum_round_trip(ts in prop::collection::vec((0.0..1e9f64, -100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64,
                                                          -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..20)) {
            let poses: Vec<TimedPose> = ts.iter().filter_map(|&(t, x, y, z, a, b, c, d)| {
                let n = (a * a + b * b + c * c + d * d).sqrt();
                (n > 0.1).then(|| TimedPose {
                    timestamp: t,
                    camera_to_world: RigidTransform::from_wxyz([a / n, b / n, c / n, d / n], Vector3::new(x, y, z)).unwrap(),
                })
            }).collect();
            let back = parse_tum_trajectory(&serialize_tum(&poses)).unwrap();
            prop_assert_eq!(back.len(), poses.len());
            for (a, b) in poses.iter().zip(&back) {
                prop_assert_eq!(a.timestamp, b.timestamp);
                prop_assert!((a.camera_to_world.translation() - b.camera_to_world.translation()).norm() < 1e-9);
                let qa = a.camera_to_world.wxyz();
                let qb = b.camera_to_world.wxyz();
                prop_assert!((0..4).all(|i| (qa[i] - qb[i]).abs() < 1e-9));
            }
        }
    }
}
