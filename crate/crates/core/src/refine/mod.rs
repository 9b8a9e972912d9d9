//! Silhouette-IoU pose refinement over a discretized twist grid, and the
//! synthetic annotation simulation built on it.

mod simulate;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{exp_twist, CameraIntrinsics, RigidTransform, TriangleMesh, TwistCoordinates};
use crate::raster::{rasterize_silhouette_into, BinaryMask, Projector};

pub use simulate::{
    random_rotation, simulate_annotation, sphere_cameras, ConvergenceCriterion, SimulationConfig, SimulationReport,
    SimulationRun,
};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error("no reference frames")]
    NoFrames,
    #[error("frame {index}: reference mask is {mask:?} but the camera is {camera:?}")]
    DimensionMismatch {
        index: usize,
        mask: (u32, u32),
        camera: (u32, u32),
    },
    #[error("active frame {0} is out of range")]
    FrameOutOfRange(usize),
    #[error("not scorable: rendered and reference masks are empty in every frame")]
    NotScorable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraAxis {
    CameraX,
    CameraY,
    CameraZ,
}

impl CameraAxis {
    pub fn index(self) -> usize {
        match self {
            CameraAxis::CameraX => 0,
            CameraAxis::CameraY => 1,
            CameraAxis::CameraZ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringScope {
    /// IoU in the active frame only.
    ActiveFrame,
    /// Mean IoU over frames where rendered ∪ reference is non-empty.
    AllFramesMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationCenterPolicy {
    /// Screw axis passes through the current object-frame origin.
    ObjectFrameOrigin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub n_directions: usize,
    /// θ2 grid in meters; nonnegative, contains 0.
    pub translation_magnitudes: Vec<f64>,
    /// θ1 grid in radians; contains 0 and is symmetric under negation.
    pub rotation_magnitudes: Vec<f64>,
    pub axis_schedule: Vec<CameraAxis>,
    pub rotation_center_policy: RotationCenterPolicy,
    pub scoring_scope: ScoringScope,
    pub max_iterations: usize,
    /// Stop once no step within one stagnation window gained at least this much IoU.
    pub min_improvement: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let mut rot = vec![0.0];
        for d in [0.5, 1.0, 2.0, 5.0, 15.0] {
            rot.push(d * deg);
            rot.push(-d * deg);
        }
        RefineConfig {
            n_directions: 8,
            translation_magnitudes: [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0].iter().map(|mm| mm * 1e-3).collect(),
            rotation_magnitudes: rot,
            axis_schedule: vec![CameraAxis::CameraX, CameraAxis::CameraY, CameraAxis::CameraZ],
            rotation_center_policy: RotationCenterPolicy::ObjectFrameOrigin,
            scoring_scope: ScoringScope::ActiveFrame,
            max_iterations: 100,
            min_improvement: 1e-6,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: &str| Err(RefineError::InvalidConfig(m.into()));
        if self.n_directions < 4 {
            return bad("n_directions must be at least 4");
        }
        if self.axis_schedule.is_empty() {
            return bad("axis_schedule must not be empty");
        }
        let t = &self.translation_magnitudes;
        if !t.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return bad("translation magnitudes must be finite and nonnegative");
        }
        if t.iter().filter(|&&v| v == 0.0).count() != 1 {
            return bad("translation magnitudes must contain 0 exactly once");
        }
        let r = &self.rotation_magnitudes;
        if !r.iter().all(|v| v.is_finite()) {
            return bad("rotation magnitudes must be finite");
        }
        if r.iter().filter(|&&v| v == 0.0).count() != 1 {
            return bad("rotation magnitudes must contain 0 exactly once");
        }
        if !r.iter().all(|v| r.contains(&-v)) {
            return bad("rotation magnitudes must be symmetric under negation");
        }
        for list in [t, r] {
            let mut s = list.clone();
            s.sort_by(f64::total_cmp);
            if s.windows(2).any(|w| w[0] == w[1]) {
                return bad("magnitude lists must not contain duplicates");
            }
        }
        if !(self.min_improvement.is_finite() && self.min_improvement >= 0.0) {
            return bad("min_improvement must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RefineError> {
        let cfg: RefineConfig =
            serde_json::from_str(text).map_err(|e| RefineError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One candidate `exp(ξ1 θ1) · exp(ξ2 θ2)`, applied on the left of the current pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMotion {
    /// Rotation screw.
    pub xi1: TwistCoordinates,
    pub theta1: f64,
    /// Pure translation.
    pub xi2: TwistCoordinates,
    pub theta2: f64,
}

impl CandidateMotion {
    pub fn is_identity(&self) -> bool {
        self.theta1 == 0.0 && self.theta2 == 0.0
    }

    pub fn transform(&self) -> RigidTransform {
        exp_twist(&self.xi1, self.theta1).compose(&exp_twist(&self.xi2, self.theta2))
    }

    pub fn apply(&self, pose: &RigidTransform) -> RigidTransform {
        self.transform().compose(pose)
    }
}

/// Candidate grid for one step, ordered by `(|θ1|, |θ2|)` with the identity first.
pub fn candidate_motions(
    current: &RigidTransform,
    cam_to_world: &RigidTransform,
    axis: CameraAxis,
    cfg: &RefineConfig,
) -> Vec<CandidateMotion> {
    let r = cam_to_world.rotation_matrix();
    let omega = r.column(axis.index()).normalize();
    let (cx, cy) = (r.column(0).into_owned(), r.column(1).into_owned());
    let xi1 = TwistCoordinates::about_axis(omega, *current.translation()).expect("camera axis is a unit vector");
    let directions: Vec<Vector3<f64>> = (0..cfg.n_directions)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / cfg.n_directions as f64;
            (cx * a.cos() + cy * a.sin()).normalize()
        })
        .collect();
    let mut out = Vec::new();
    for &theta1 in &cfg.rotation_magnitudes {
        for &theta2 in &cfg.translation_magnitudes {
            if theta2 == 0.0 {
                out.push(CandidateMotion {
                    xi1,
                    theta1,
                    xi2: TwistCoordinates::translation(Vector3::zeros()),
                    theta2,
                });
                continue;
            }
            for v in &directions {
                out.push(CandidateMotion {
                    xi1,
                    theta1,
                    xi2: TwistCoordinates::translation(*v),
                    theta2,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.theta1
            .abs()
            .total_cmp(&b.theta1.abs())
            .then(a.theta2.abs().total_cmp(&b.theta2.abs()))
    });
    out
}

/// A calibrated view with the reference silhouette to match.
#[derive(Clone, Debug)]
pub struct ReferenceView {
    pub cam_to_world: RigidTransform,
    pub reference: BinaryMask,
}

struct Scratch {
    projector: Projector,
    mask: BinaryMask,
}

/// Precomputed scoring state for one mesh against a set of reference views.
pub struct SilhouetteScorer<'a> {
    mesh: &'a TriangleMesh,
    k: CameraIntrinsics,
    views: &'a [ReferenceView],
    world_to_cam: Vec<RigidTransform>,
    ref_counts: Vec<u64>,
}

impl<'a> SilhouetteScorer<'a> {
    pub fn new(mesh: &'a TriangleMesh, views: &'a [ReferenceView], k: &CameraIntrinsics) -> Result<Self, RefineError> {
        if views.is_empty() {
            return Err(RefineError::NoFrames);
        }
        for (index, v) in views.iter().enumerate() {
            if v.reference.dimensions() != (k.width, k.height) {
                return Err(RefineError::DimensionMismatch {
                    index,
                    mask: v.reference.dimensions(),
                    camera: (k.width, k.height),
                });
            }
        }
        Ok(SilhouetteScorer {
            mesh,
            k: *k,
            views,
            world_to_cam: views.iter().map(|v| v.cam_to_world.inverse()).collect(),
            ref_counts: views.iter().map(|v| v.reference.count()).collect(),
        })
    }

    pub fn views(&self) -> &[ReferenceView] {
        self.views
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            projector: Projector::new(),
            mask: BinaryMask::new(self.k.width, self.k.height),
        }
    }

    /// `(intersection, union)` pixel counts in one view; leaves the scratch mask clear.
    fn overlap(&self, s: &mut Scratch, pose: &RigidTransform, view: usize) -> (u64, u64) {
        let obj_to_cam = self.world_to_cam[view].compose(pose);
        let reference = &self.views[view].reference;
        match rasterize_silhouette_into(&mut s.projector, &mut s.mask, self.mesh, &obj_to_cam, &self.k) {
            None => (0, self.ref_counts[view]),
            Some((y0, y1)) => {
                let rendered = s.mask.count_rows(y0, y1);
                let inter = s.mask.intersection_count_rows(reference, y0, y1);
                s.mask.clear_rows(y0, y1);
                (inter, rendered + self.ref_counts[view] - inter)
            }
        }
    }

    /// Score in `[0, 1]`; `None` when no view has a non-empty union.
    fn score_with(&self, s: &mut Scratch, pose: &RigidTransform, scope: ScoringScope, active: usize) -> Option<f64> {
        match scope {
            ScoringScope::ActiveFrame => {
                let (i, u) = self.overlap(s, pose, active);
                // Both empty in this view is perfect agreement.
                Some(if u == 0 { 1.0 } else { i as f64 / u as f64 })
            }
            ScoringScope::AllFramesMean => {
                let (mut sum, mut n) = (0.0, 0usize);
                for v in 0..self.views.len() {
                    let (i, u) = self.overlap(s, pose, v);
                    if u > 0 {
                        sum += i as f64 / u as f64;
                        n += 1;
                    }
                }
                (n > 0).then(|| sum / n as f64)
            }
        }
    }

    pub fn score(&self, pose: &RigidTransform, scope: ScoringScope, active: usize) -> Result<f64, RefineError> {
        if active >= self.views.len() {
            return Err(RefineError::FrameOutOfRange(active));
        }
        let mut s = self.scratch();
        if scope == ScoringScope::ActiveFrame && self.overlap(&mut s, pose, active).1 == 0 {
            // Only an error when no view at all could be scored.
            if (0..self.views.len()).all(|v| self.overlap(&mut s, pose, v).1 == 0) {
                return Err(RefineError::NotScorable);
            }
        }
        self.score_with(&mut s, pose, scope, active).ok_or(RefineError::NotScorable)
    }
}

/// Silhouette IoU of `pose` against the references; see [`ScoringScope`].
pub fn score_pose(
    pose: &RigidTransform,
    mesh: &TriangleMesh,
    views: &[ReferenceView],
    k: &CameraIntrinsics,
    scope: ScoringScope,
    active: usize,
) -> Result<f64, RefineError> {
    SilhouetteScorer::new(mesh, views, k)?.score(pose, scope, active)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub pose: RigidTransform,
    pub motion: CandidateMotion,
    pub score_before: f64,
    pub score_after: f64,
}

/// Scores every candidate and returns the first maximum in candidate order.
/// The identity is first, so the score never decreases.
pub fn refine_step(
    current: &RigidTransform,
    scorer: &SilhouetteScorer,
    active: usize,
    axis: CameraAxis,
    cfg: &RefineConfig,
) -> Result<StepResult, RefineError> {
    cfg.validate()?;
    let view = scorer.views.get(active).ok_or(RefineError::FrameOutOfRange(active))?;
    let candidates = candidate_motions(current, &view.cam_to_world, axis, cfg);
    let scores: Vec<Option<f64>> = candidates
        .par_iter()
        .map_init(
            || scorer.scratch(),
            |s, c| scorer.score_with(s, &c.apply(current), cfg.scoring_scope, active),
        )
        .collect();
    let before = scores[0].ok_or(RefineError::NotScorable)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if let Some(s) = *s {
            if s > scores[best].expect("best is scored") {
                best = i;
            }
        }
    }
    let motion = candidates[best];
    let pose = if best == 0 { *current } else { motion.apply(current) };
    Ok(StepResult {
        pose,
        motion,
        score_before: before,
        score_after: scores[best].expect("best is scored"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Index into the reference views.
    pub active_frame: usize,
    pub axis: CameraAxis,
    pub motion: CandidateMotion,
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub iterations: Vec<TraceEntry>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Number of consecutive steps whose gains decide stagnation: one full axis
/// cycle, extended to visit every (frame, axis) pairing under active-frame scoring.
pub fn stagnation_window(cfg: &RefineConfig, n_views: usize) -> usize {
    let a = cfg.axis_schedule.len().max(1);
    match cfg.scoring_scope {
        ScoringScope::AllFramesMean => a,
        ScoringScope::ActiveFrame => a / gcd(a, n_views.max(1)) * n_views.max(1),
    }
}

/// Iterates [`refine_step`], round-robin over views and the axis schedule.
///
/// `observe` sees each entry and the pose after it; returning `false` stops early.
pub fn refine_observed(
    initial: &RigidTransform,
    scorer: &SilhouetteScorer,
    cfg: &RefineConfig,
    mut observe: impl FnMut(&TraceEntry, &RigidTransform) -> bool,
) -> Result<(RigidTransform, RefineTrace), RefineError> {
    cfg.validate()?;
    let n = scorer.views.len();
    let window = stagnation_window(cfg, n);
    let mut pose = *initial;
    let mut trace = RefineTrace::default();
    for it in 0..cfg.max_iterations {
        let active = it % n;
        let axis = cfg.axis_schedule[it % cfg.axis_schedule.len()];
        let step = refine_step(&pose, scorer, active, axis, cfg)?;
        pose = step.pose;
        let entry = TraceEntry {
            iteration: it,
            active_frame: active,
            axis,
            motion: step.motion,
            score_before: step.score_before,
            score_after: step.score_after,
        };
        let go_on = observe(&entry, &pose);
        trace.iterations.push(entry);
        if !go_on {
            break;
        }
        if trace.iterations.len() >= window {
            let best_gain = trace.iterations[trace.iterations.len() - window..]
                .iter()
                .map(|e| e.score_after - e.score_before)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_gain < cfg.min_improvement {
                break;
            }
        }
    }
    Ok((pose, trace))
}

pub fn refine(
    initial: &RigidTransform,
    mesh: &TriangleMesh,
    views: &[ReferenceView],
    k: &CameraIntrinsics,
    cfg: &RefineConfig,
) -> Result<(RigidTransform, RefineTrace), RefineError> {
    let scorer = SilhouetteScorer::new(mesh, views, k)?;
    refine_observed(initial, &scorer, cfg, |_, _| true)
}

#[cfg(test)]
mod tests;
