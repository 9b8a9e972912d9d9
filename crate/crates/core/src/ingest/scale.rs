//! Reconstruction scale from depth images or a picked known distance.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;

use super::{FrameRecord, IngestError, Scene, SparseTrack};
use crate::geometry::CameraIntrinsics;

/// Fewer valid ratio samples than this are rejected.
pub const MIN_SCALE_SAMPLES: usize = 20;

/// Raw sensor depth lookup. Returns `None` (or 0) for invalid pixels.
pub trait DepthLookup {
    fn raw_depth(&self, frame_id: u32, x: u32, y: u32) -> Option<f64>;
}

impl<F: Fn(u32, u32, u32) -> Option<f64>> DepthLookup for F {
    fn raw_depth(&self, frame_id: u32, x: u32, y: u32) -> Option<f64> {
        self(frame_id, x, y)
    }
}

/// A 16-bit depth image in raw sensor units; 0 marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl RawDepthImage {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let img = image::open(path).map_err(|e| IngestError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma16();
        Ok(RawDepthImage {
            width: gray.width(),
            height: gray.height(),
            data: gray.into_raw(),
        })
    }

    pub fn get(&self, x: u32, y: u32) -> Option<u16> {
        (x < self.width && y < self.height).then(|| self.data[(y * self.width + x) as usize])
    }
}

impl DepthLookup for HashMap<u32, RawDepthImage> {
    fn raw_depth(&self, frame_id: u32, x: u32, y: u32) -> Option<f64> {
        self.get(&frame_id)?.get(x, y).map(f64::from)
    }
}

/// Sample median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median of `(raw depth × depth_scale) / z_cam` over all valid track observations.
///
/// An observation is valid when its frame exists, the pixel `(⌊u⌋, ⌊v⌋)` is inside
/// the image with positive depth, and the track point lies in front of that camera.
pub fn solve_scale_from_depth(
    tracks: &[SparseTrack],
    frames: &[FrameRecord],
    k: &CameraIntrinsics,
    depth: &impl DepthLookup,
) -> Result<f64, IngestError> {
    let world_to_cam: HashMap<u32, _> = frames
        .iter()
        .map(|f| (f.frame_id, f.camera_to_world.inverse()))
        .collect();
    let mut ratios = Vec::new();
    for track in tracks {
        for &(frame_id, u, v) in &track.observations {
            let Some(w2c) = world_to_cam.get(&frame_id) else { continue };
            if !(u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64) {
                continue;
            }
            let z = w2c.apply_point(&track.point_world).z;
            if !(z > 0.0 && z.is_finite()) {
                continue;
            }
            let Some(raw) = depth.raw_depth(frame_id, u.floor() as u32, v.floor() as u32) else { continue };
            if !(raw > 0.0 && raw.is_finite()) {
                continue;
            }
            ratios.push(raw * k.depth_scale / z);
        }
    }
    if ratios.len() < MIN_SCALE_SAMPLES {
        return Err(IngestError::InsufficientData {
            found: ratios.len(),
            required: MIN_SCALE_SAMPLES,
        });
    }
    Ok(median(&ratios).expect("nonempty"))
}

/// Scale from two picked reconstruction points whose metric distance is known.
pub fn solve_scale_from_points(a: &Vector3<f64>, b: &Vector3<f64>, known_distance_m: f64) -> Result<f64, IngestError> {
    let d = (a - b).norm();
    if !(known_distance_m > 0.0 && known_distance_m.is_finite()) {
        return Err(IngestError::InvalidScale(known_distance_m));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(IngestError::InvalidScale(d));
    }
    Ok(known_distance_m / d)
}

/// Multiplies camera translations and track points by `s`. Object poses are
/// left alone: they are annotated after scale recovery.
pub fn apply_scale(scene: &mut Scene, tracks: &mut [SparseTrack], s: f64) -> Result<(), IngestError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(IngestError::InvalidScale(s));
    }
    for f in &mut scene.frames {
        let t = *f.camera_to_world.translation() * s;
        f.camera_to_world = f.camera_to_world.with_translation(t);
    }
    for t in tracks.iter_mut() {
        t.point_world *= s;
    }
    scene.scale_applied *= s;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 1e-3).unwrap()
    }

    fn frame(id: u32, pose: RigidTransform) -> FrameRecord {
        FrameRecord {
            frame_id: id,
            timestamp: None,
            camera_to_world: pose,
            rgb_path: PathBuf::from(format!("{id}.png")),
            depth_path: None,
        }
    }

    /// Tracks observed by an identity camera at depth `z`, with sensor ratio from `ratio(i)`.
    fn forced(ratios: &[f64]) -> (Vec<SparseTrack>, Vec<FrameRecord>, HashMap<(u32, u32), f64>) {
        let mut tracks = Vec::new();
        let mut depth = HashMap::new();
        for (i, r) in ratios.iter().enumerate() {
            let (x, y) = (10 + i as u32, 20);
            let z = 1.5;
            tracks.push(SparseTrack {
                point_world: k().unproject(x as f64 + 0.5, y as f64 + 0.5, z),
                observations: vec![(0, x as f64 + 0.5, y as f64 + 0.5)],
            });
            depth.insert((x, y), r * z / 1e-3);
        }
        (tracks, vec![frame(0, RigidTransform::identity())], depth)
    }

    fn solve(ratios: &[f64]) -> Result<f64, IngestError> {
        let (tracks, frames, depth) = forced(ratios);
        solve_scale_from_depth(&tracks, &frames, &k(), &|_, x, y| depth.get(&(x, y)).copied())
    }

    #[test]
    fn all_ratios_two() {
        assert!((solve(&[2.0; 25]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn median_rejects_outlier() {
        let m = median(&[1.9, 2.0, 2.1, 50.0]).unwrap();
        assert!((m - 2.0).abs() <= 0.05 + 1e-12);
        let many: Vec<f64> = [1.9, 2.0, 2.1, 50.0].iter().cycle().take(24).copied().collect();
        assert!((solve(&many).unwrap() - 2.0).abs() <= 0.05 + 1e-12);
    }

    #[test]
    fn zero_depth_is_insufficient() {
        let (tracks, frames, _) = forced(&[2.0; 30]);
        match solve_scale_from_depth(&tracks, &frames, &k(), &|_, _, _| Some(0.0)) {
            Err(IngestError::InsufficientData { found: 0, required: 20 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(solve(&[2.0; 19]), Err(IngestError::InsufficientData { found: 19, .. })));
    }

    #[test]
    fn two_point_scale() {
        let s = solve_scale_from_points(&Vector3::zeros(), &Vector3::new(0.0, 0.5, 0.0), 1.0).unwrap();
        assert_eq!(s, 2.0);
        assert!(solve_scale_from_points(&Vector3::zeros(), &Vector3::zeros(), 1.0).is_err());
    }

    fn scene_with(t: Vector3<f64>) -> Scene {
        Scene {
            frames: vec![frame(0, RigidTransform::from_translation(t))],
            objects: vec![],
            intrinsics: k(),
            scale_applied: 1.0,
            config_dir: PathBuf::new(),
        }
    }

    #[test]
    fn apply_scale_examples() {
        let mut s = scene_with(Vector3::new(1.0, 0.0, 0.0));
        let mut tracks = vec![];
        apply_scale(&mut s, &mut tracks, 2.0).unwrap();
        assert_eq!(*s.frames[0].camera_to_world.translation(), Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(s.scale_applied, 2.0);
        let before = s.frames.clone();
        apply_scale(&mut s, &mut tracks, 1.0).unwrap();
        assert_eq!(s.frames, before);
        assert!(apply_scale(&mut s, &mut tracks, 0.0).is_err());
        assert!(apply_scale(&mut s, &mut tracks, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_exact_median(seed in 0u64..1000, n in 20usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ratios: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
            let (mut tracks, frames, depth) = forced(&ratios);
            let lookup = |_: u32, x: u32, y: u32| depth.get(&(x, y)).copied();
            let a = solve_scale_from_depth(&tracks, &frames, &k(), &lookup).unwrap();
            // Recompute the ratio multiset independently from the generated tracks.
            let observed: Vec<f64> = tracks.iter().map(|t| {
                let (_, u, v) = t.observations[0];
                depth[&(u as u32, v as u32)] * 1e-3 / t.point_world.z
            }).collect();
            prop_assert_eq!(a, median(&observed).unwrap());
            tracks.reverse();
            tracks.rotate_left(seed as usize % n);
            let b = solve_scale_from_depth(&tracks, &frames, &k(), &lookup).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn apply_scale_composes(s1 in 0.1..10.0f64, s2 in 0.1..10.0f64, x in -5.0..5.0f64) {
            let mut a = scene_with(Vector3::new(x, 1.0, -2.0));
            let mut ta = vec![SparseTrack { point_world: Vector3::new(1.0, x, 3.0), observations: vec![(0, 1.0, 1.0)] }];
            let mut b = a.clone();
            let mut tb = ta.clone();
            apply_scale(&mut a, &mut ta, s1).unwrap();
            apply_scale(&mut a, &mut ta, s2).unwrap();
            apply_scale(&mut b, &mut tb, s1 * s2).unwrap();
            let ta_ = a.frames[0].camera_to_world.translation();
            let tb_ = b.frames[0].camera_to_world.translation();
            prop_assert!((ta_ - tb_).norm() <= 1e-12 * (1.0 + tb_.norm()));
            prop_assert!((ta[0].point_world - tb[0].point_world).norm() <= 1e-12 * (1.0 + tb[0].point_world.norm()));
            prop_assert!((a.scale_applied - b.scale_applied).abs() <= 1e-12 * b.scale_applied);
            apply_scale(&mut b, &mut tb, 1.0 / (s1 * s2)).unwrap();
            prop_assert!((b.frames[0].camera_to_world.translation() - Vector3::new(x, 1.0, -2.0)).norm() < 1e-12 * (1.0 + x.abs()) * 4.0);
        }
    }
}
