use super::*;
use crate::geometry::shapes;
use crate::raster::{mask_iou, render_silhouette};
use nalgebra::{Unit, UnitQuaternion};
use proptest::prelude::*;

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 1e-3).unwrap()
}

fn small_k() -> CameraIntrinsics {
    CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240, 1e-3).unwrap()
}

fn ring_cameras(n: usize, radius: f64) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = Vector3::new(radius * a.cos(), radius * a.sin(), radius * 0.5 * (i as f64 * 1.7).sin());
            RigidTransform::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap()
        })
        .collect()
}

fn views_for(mesh: &TriangleMesh, gt: &RigidTransform, cams: &[RigidTransform], k: &CameraIntrinsics) -> Vec<ReferenceView> {
    cams.iter()
        .map(|c| ReferenceView {
            cam_to_world: *c,
            reference: render_silhouette(mesh, gt, c, k),
        })
        .collect()
}

fn grid(rot: Vec<f64>, trans: Vec<f64>) -> RefineConfig {
    RefineConfig {
        rotation_magnitudes: rot,
        translation_magnitudes: trans,
        ..RefineConfig::default()
    }
}

#[test]
fn default_config_is_valid_and_round_trips() {
    let cfg = RefineConfig::default();
    cfg.validate().unwrap();
    assert_eq!(RefineConfig::from_json("{}").unwrap(), cfg);
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"active-frame\"") && text.contains("\"camera_x\""));
    assert_eq!(RefineConfig::from_json(&text).unwrap(), cfg);
    let custom = RefineConfig::from_json(r#"{"scoring_scope": "all-frames-mean", "max_iterations": 3}"#).unwrap();
    assert_eq!(custom.scoring_scope, ScoringScope::AllFramesMean);
    assert_eq!(custom.max_iterations, 3);
}

#[test]
fn invalid_configs() {
    for c in [
        grid(vec![0.1, -0.1], vec![0.0]),
        grid(vec![0.0], vec![0.01]),
        grid(vec![0.0, 0.1], vec![0.0]),
        grid(vec![0.0], vec![0.0, -0.01]),
        grid(vec![0.0, 0.0], vec![0.0]),
        RefineConfig { n_directions: 3, ..RefineConfig::default() },
        RefineConfig { axis_schedule: vec![], ..RefineConfig::default() },
    ] {
        assert!(c.validate().is_err(), "{c:?}");
    }
    assert!(RefineConfig::from_json(r#"{"bogus": 1}"#).is_err());
}

#[test]
fn candidate_counts() {
    let cam = RigidTransform::identity();
    let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
    let only_identity = candidate_motions(&pose, &cam, CameraAxis::CameraX, &grid(vec![0.0], vec![0.0]));
    assert_eq!(only_identity.len(), 1);
    assert!(only_identity[0].is_identity());
    assert_eq!(only_identity[0].apply(&pose), pose);

    let nine = candidate_motions(&pose, &cam, CameraAxis::CameraX, &grid(vec![0.0], vec![0.0, 0.01]));
    assert_eq!(nine.len(), 9);

    let all = candidate_motions(&pose, &cam, CameraAxis::CameraY, &RefineConfig::default());
    assert_eq!(all.len(), 11 * 49);
    assert_eq!(all.iter().filter(|c| c.is_identity()).count(), 1);
    assert!(all[0].is_identity());
    assert!(all.windows(2).all(|w| (w[0].theta1.abs(), w[0].theta2) <= (w[1].theta1.abs(), w[1].theta2)));
}

#[test]
fn translation_candidate_moves_along_camera_x() {
    let cam = RigidTransform::look_at(Vector3::new(1.0, 2.0, 0.5), Vector3::zeros(), Vector3::z()).unwrap();
    let pose = RigidTransform::new(UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1), Vector3::new(0.1, -0.2, 0.05));
    let cands = candidate_motions(&pose, &cam, CameraAxis::CameraZ, &grid(vec![0.0], vec![0.0, 0.01]));
    // Direction 0 is the camera x axis.
    let c = cands[1];
    assert_eq!(c.theta2, 0.01);
    let moved = c.apply(&pose);
    let cam_x = cam.rotation_matrix().column(0).into_owned();
    assert!((moved.translation() - (pose.translation() + cam_x * 0.01)).norm() < 1e-15);
    assert!(moved.rotation().angle_to(pose.rotation()) < 1e-12);
}

#[test]
fn rotation_candidate_is_a_screw_about_the_object_origin() {
    let cam = RigidTransform::look_at(Vector3::new(0.0, -1.0, 0.3), Vector3::zeros(), Vector3::z()).unwrap();
    let pose = RigidTransform::new(UnitQuaternion::from_euler_angles(0.1, 0.5, -0.3), Vector3::new(0.2, 0.1, -0.1));
    let theta = 0.25;
    let cands = candidate_motions(&pose, &cam, CameraAxis::CameraY, &grid(vec![0.0, theta, -theta], vec![0.0]));
    let c = cands.iter().find(|c| c.theta1 == theta).unwrap();
    let moved = c.apply(&pose);
    let axis = Unit::new_normalize(cam.rotation_matrix().column(1).into_owned());
    let expected = UnitQuaternion::from_axis_angle(&axis, theta) * pose.rotation();
    assert!((moved.translation() - pose.translation()).norm() < 1e-12);
    assert!(moved.rotation().angle_to(&expected) < 1e-12);
}

#[test]
fn score_examples() {
    let cube = shapes::cuboid(Vector3::zeros(), Vector3::repeat(0.2));
    let gt = RigidTransform::new(UnitQuaternion::from_euler_angles(0.3, 0.1, 0.7), Vector3::zeros());
    let cams = ring_cameras(4, 1.0);
    let views = views_for(&cube, &gt, &cams, &k());
    assert_eq!(score_pose(&gt, &cube, &views, &k(), ScoringScope::AllFramesMean, 0).unwrap(), 1.0);
    assert_eq!(score_pose(&gt, &cube, &views, &k(), ScoringScope::ActiveFrame, 2).unwrap(), 1.0);

    // Object behind the only camera, whose reference is non-empty.
    let cam = RigidTransform::look_at(Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0), Vector3::z()).unwrap();
    let reference = render_silhouette(&cube, &RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0)), &cam, &k());
    let front = [ReferenceView { cam_to_world: cam, reference }];
    let behind_cam = RigidTransform::from_translation(Vector3::new(-5.0, 0.0, 0.0));
    assert_eq!(score_pose(&behind_cam, &cube, &front, &k(), ScoringScope::AllFramesMean, 0).unwrap(), 0.0);
    assert_eq!(score_pose(&behind_cam, &cube, &front, &k(), ScoringScope::ActiveFrame, 0).unwrap(), 0.0);

    let empty = [ReferenceView { cam_to_world: RigidTransform::identity(), reference: BinaryMask::new(640, 480) }];
    let far = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -3.0));
    assert!(matches!(score_pose(&far, &cube, &empty, &k(), ScoringScope::AllFramesMean, 0), Err(RefineError::NotScorable)));
    assert!(matches!(score_pose(&far, &cube, &empty, &k(), ScoringScope::ActiveFrame, 0), Err(RefineError::NotScorable)));
    assert!(score_pose(&far, &cube, &[], &k(), ScoringScope::ActiveFrame, 0).is_err());
}

#[test]
fn mean_of_point_four_and_point_eight() {
    // Unit square at z = 2, f = 500 covers columns 195..=444 and rows 115..=364.
    let square = shapes::square(1.0, 0.0);
    let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 2.0));
    let rows = |n: u32| BinaryMask::from_fn(640, 480, |x, y| (195..=444).contains(&x) && (115..115 + n).contains(&y));
    let views = [
        ReferenceView { cam_to_world: RigidTransform::identity(), reference: rows(100) },
        ReferenceView { cam_to_world: RigidTransform::identity(), reference: rows(200) },
    ];
    let rendered = render_silhouette(&square, &pose, &RigidTransform::identity(), &k());
    assert_eq!(rendered.count(), 62_500);
    let a = mask_iou(&rendered, &views[0].reference).unwrap();
    let b = mask_iou(&rendered, &views[1].reference).unwrap();
    assert!((a - 0.4).abs() < 1e-12 && (b - 0.8).abs() < 1e-12);
    let s = score_pose(&pose, &square, &views, &k(), ScoringScope::AllFramesMean, 0).unwrap();
    assert!((s - 0.6).abs() < 1e-12);
    assert!((score_pose(&pose, &square, &views, &k(), ScoringScope::ActiveFrame, 1).unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn step_fixed_point_and_planar_offset() {
    let cube = shapes::cuboid(Vector3::zeros(), Vector3::repeat(0.1));
    let gt = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.6));
    let views = views_for(&cube, &gt, &[RigidTransform::identity()], &k());
    let scorer = SilhouetteScorer::new(&cube, &views, &k()).unwrap();
    let cfg = grid(vec![0.0], vec![0.0, 0.005, 0.01, 0.02]);
    let fixed = refine_step(&gt, &scorer, 0, CameraAxis::CameraX, &cfg).unwrap();
    assert!(fixed.motion.is_identity());
    assert_eq!(fixed.pose, gt);
    assert_eq!(fixed.score_after, 1.0);

    let start = RigidTransform::from_translation(Vector3::new(0.02, 0.0, 0.6));
    let step = refine_step(&start, &scorer, 0, CameraAxis::CameraZ, &cfg).unwrap();
    let err = |p: &RigidTransform| (p.translation() - gt.translation()).norm();
    assert!(err(&step.pose) < err(&start));
    assert!(step.score_after >= step.score_before);
    // Exhaustive oracle: no candidate scores higher than the chosen one.
    for c in candidate_motions(&start, &views[0].cam_to_world, CameraAxis::CameraZ, &cfg) {
        let s = scorer.score(&c.apply(&start), ScoringScope::ActiveFrame, 0).unwrap();
        assert!(s <= step.score_after);
    }
    assert!(err(&step.pose) < 1e-12);
}

#[test]
fn refine_zero_iterations_and_convergence() {
    let cube = shapes::cuboid(Vector3::zeros(), Vector3::new(0.1, 0.14, 0.08));
    let gt = RigidTransform::from_rotation(UnitQuaternion::from_euler_angles(0.2, -0.4, 0.9));
    let kk = small_k();
    let cams = ring_cameras(8, 0.5);
    let views = views_for(&cube, &gt, &cams, &kk);
    let init = RigidTransform::new(
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 0.5)), 5f64.to_radians()) * gt.rotation(),
        Vector3::new(0.006, -0.005, 0.0055),
    );
    let cfg0 = RefineConfig { max_iterations: 0, ..RefineConfig::default() };
    let (p, trace) = refine(&init, &cube, &views, &kk, &cfg0).unwrap();
    assert_eq!(p, init);
    assert!(trace.iterations.is_empty());

    let cfg = RefineConfig { max_iterations: 60, scoring_scope: ScoringScope::AllFramesMean, ..RefineConfig::default() };
    let (p, trace) = refine(&init, &cube, &views, &kk, &cfg).unwrap();
    assert!((p.translation() - gt.translation()).norm() < 1e-3, "{:?}", p.translation());
    assert!(trace.iterations.windows(2).all(|w| w[1].score_after >= w[0].score_after));
    assert!(trace.iterations.iter().all(|e| e.score_after >= e.score_before));
}

#[test]
fn stagnation_windows() {
    let mut cfg = RefineConfig::default();
    assert_eq!(stagnation_window(&cfg, 40), 120);
    assert_eq!(stagnation_window(&cfg, 6), 6);
    cfg.scoring_scope = ScoringScope::AllFramesMean;
    assert_eq!(stagnation_window(&cfg, 40), 3);
}

#[test]
fn simulation_trivial_start_and_determinism() {
    let meshes = vec![("cube".to_string(), shapes::cuboid(Vector3::zeros(), Vector3::new(0.2, 0.12, 0.1)))];
    let sim = SimulationConfig {
        n_cameras: 6,
        noise_sigma: 0.0,
        runs_per_mesh: 2,
        random_initial_orientation: false,
        width: 160,
        height: 120,
        focal: 150.0,
        ..SimulationConfig::default()
    };
    let report = simulate_annotation(&meshes, &sim, &RefineConfig::default()).unwrap();
    for r in &report.runs {
        assert_eq!(r.iterations_to_converge, Some(0));
        assert_eq!(r.final_positional_error, 0.0);
    }
    assert_eq!(report.mean_iterations, Some(0.0));

    let noisy = SimulationConfig { noise_sigma: 0.01, random_initial_orientation: true, ..sim };
    let cfg = RefineConfig { max_iterations: 6, ..RefineConfig::default() };
    let a = simulate_annotation(&meshes, &noisy, &cfg).unwrap();
    let b = simulate_annotation(&meshes, &noisy, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.runs.iter().all(|r| r.final_axis_dots.iter().all(|d| (-1.0..=1.0).contains(d))));
    assert!(simulate_annotation(&meshes, &SimulationConfig { n_cameras: 1, ..noisy }, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn steps_never_decrease_and_are_deterministic(
        seed in 0u64..10_000,
        dx in -0.03..0.03f64, dy in -0.03..0.03f64, dz in -0.03..0.03f64,
        rx in -0.3..0.3f64, ry in -0.3..0.3f64,
        axis in 0usize..3, active in 0usize..3, all in any::<bool>(),
    ) {
        let mesh = shapes::procedural_set().swap_remove((seed % 5) as usize).1;
        let kk = small_k();
        let cams = ring_cameras(3, 4.0 * mesh.diameter());
        let gt = RigidTransform::from_rotation(UnitQuaternion::from_euler_angles(seed as f64 * 0.1, 0.3, 0.0));
        let views = views_for(&mesh, &gt, &cams, &kk);
        let scorer = SilhouetteScorer::new(&mesh, &views, &kk).unwrap();
        let start = RigidTransform::new(UnitQuaternion::from_euler_angles(rx, ry, 0.0) * gt.rotation(), Vector3::new(dx, dy, dz));
        let cfg = RefineConfig {
            scoring_scope: if all { ScoringScope::AllFramesMean } else { ScoringScope::ActiveFrame },
            ..RefineConfig::default()
        };
        let axis = [CameraAxis::CameraX, CameraAxis::CameraY, CameraAxis::CameraZ][axis];
        let s1 = refine_step(&start, &scorer, active, axis, &cfg).unwrap();
        let s2 = refine_step(&start, &scorer, active, axis, &cfg).unwrap();
        prop_assert!(s1.score_after >= s1.score_before);
        prop_assert_eq!(s1.score_before, scorer.score(&start, cfg.scoring_scope, active).unwrap());
        prop_assert_eq!(&s1, &s2);
    }
}

#[test]
fn step_rejects_grid_without_identity() {
    let cube = shapes::cuboid(Vector3::zeros(), Vector3::repeat(0.1));
    let gt = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.6));
    let views = views_for(&cube, &gt, &[RigidTransform::identity()], &k());
    let scorer = SilhouetteScorer::new(&cube, &views, &k()).unwrap();
    let cfg = grid(vec![0.0], vec![0.005, 0.01]);
    assert!(matches!(
        refine_step(&gt, &scorer, 0, CameraAxis::CameraX, &cfg),
        Err(RefineError::InvalidConfig(_))
    ));
}
