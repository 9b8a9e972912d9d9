//! Synthetic annotation runs: random ground truth, cameras on a sphere,
//! noisy initialization, refine until converged.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{refine_observed, RefineConfig, RefineError, ReferenceView, SilhouetteScorer};
use crate::geometry::{CameraIntrinsics, RigidTransform, TriangleMesh};
use crate::raster::render_silhouette;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriterion {
    /// Meters.
    pub position_tolerance: f64,
    /// Minimum dot product between matching rotation-matrix columns.
    pub min_axis_dot: f64,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        ConvergenceCriterion {
            position_tolerance: 1e-3,
            min_axis_dot: 0.99,
        }
    }
}

impl ConvergenceCriterion {
    /// `(positional error, column dots, converged)`.
    pub fn evaluate(&self, pose: &RigidTransform, gt: &RigidTransform) -> (f64, [f64; 3], bool) {
        let e = (pose.translation() - gt.translation()).norm();
        let (r, g) = (pose.rotation_matrix(), gt.rotation_matrix());
        let dots = [0, 1, 2].map(|i| r.column(i).dot(&g.column(i)).clamp(-1.0, 1.0));
        let ok = e < self.position_tolerance && dots.iter().all(|&d| d > self.min_axis_dot);
        (e, dots, ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub n_cameras: usize,
    /// Standard deviation of the per-axis initial position noise, meters.
    pub noise_sigma: f64,
    pub runs_per_mesh: usize,
    pub seed: u64,
    /// Uniformly random initial orientation; otherwise start at the true orientation.
    pub random_initial_orientation: bool,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Camera sphere radius as a multiple of the mesh diameter.
    pub radius_factor: f64,
    pub criterion: ConvergenceCriterion,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_cameras: 40,
            noise_sigma: 0.1,
            runs_per_mesh: 10,
            seed: 0,
            random_initial_orientation: true,
            width: 640,
            height: 480,
            focal: 600.0,
            radius_factor: 4.0,
            criterion: ConvergenceCriterion::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub mesh: String,
    pub seed: u64,
    /// First iteration after which the criterion held; `None` if it never did.
    pub iterations_to_converge: Option<usize>,
    pub iterations_run: usize,
    pub final_positional_error: f64,
    pub final_axis_dots: [f64; 3],
    pub final_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub runs: Vec<SimulationRun>,
    /// Mean over converged runs; `None` when no run converged.
    pub mean_iterations: Option<f64>,
    pub converged_fraction: f64,
}

/// Uniform random rotation (normalized 4D Gaussian).
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

/// `n` cameras uniformly on a sphere of `radius`, z axis toward the origin, random roll.
pub fn sphere_cameras(n: usize, radius: f64, rng: &mut impl Rng) -> Vec<RigidTransform> {
    (0..n)
        .map(|_| {
            let eye = random_unit(rng) * radius;
            loop {
                let up = random_unit(rng);
                if up.cross(&eye.normalize()).norm() > 0.1 {
                    return RigidTransform::look_at(eye, Vector3::zeros(), up).expect("up is not parallel to the view");
                }
            }
        })
        .collect()
}

fn run_one(
    name: &str,
    mesh: &TriangleMesh,
    seed: u64,
    sim: &SimulationConfig,
    cfg: &RefineConfig,
    k: &CameraIntrinsics,
) -> Result<SimulationRun, RefineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = RigidTransform::from_rotation(random_rotation(&mut rng));
    let cams = sphere_cameras(sim.n_cameras, sim.radius_factor * mesh.diameter(), &mut rng);
    let views: Vec<ReferenceView> = cams
        .iter()
        .map(|c| ReferenceView {
            cam_to_world: *c,
            reference: render_silhouette(mesh, &gt, c, k),
        })
        .collect();
    let noise = Normal::new(0.0, sim.noise_sigma.max(0.0)).expect("finite sigma");
    let t0 = Vector3::from_fn(|_, _| noise.sample(&mut rng));
    let r0 = if sim.random_initial_orientation {
        random_rotation(&mut rng)
    } else {
        *gt.rotation()
    };
    let initial = RigidTransform::new(r0, t0);
    let scorer = SilhouetteScorer::new(mesh, &views, k)?;

    let (mut err, mut dots, ok) = sim.criterion.evaluate(&initial, &gt);
    let mut converged = ok.then_some(0);
    let mut iterations_run = 0;
    let mut final_score = scorer.score(&initial, cfg.scoring_scope, 0)?;
    if converged.is_none() {
        refine_observed(&initial, &scorer, cfg, |entry, pose| {
            iterations_run = entry.iteration + 1;
            final_score = entry.score_after;
            let (e, d, ok) = sim.criterion.evaluate(pose, &gt);
            err = e;
            dots = d;
            if ok {
                converged = Some(entry.iteration + 1);
            }
            !ok
        })?;
    }
    Ok(SimulationRun {
        mesh: name.to_string(),
        seed,
        iterations_to_converge: converged,
        iterations_run,
        final_positional_error: err,
        final_axis_dots: dots,
        final_score,
    })
}

/// Runs `runs_per_mesh` independent annotations per mesh. Run `i` of mesh `m`
/// uses seed `sim.seed + m · runs_per_mesh + i`, so reports are reproducible
/// and independent of thread count.
pub fn simulate_annotation(
    meshes: &[(String, TriangleMesh)],
    sim: &SimulationConfig,
    cfg: &RefineConfig,
) -> Result<SimulationReport, RefineError> {
    cfg.validate()?;
    if sim.n_cameras < 2 {
        return Err(RefineError::InvalidConfig("simulation needs at least 2 cameras".into()));
    }
    if !(sim.noise_sigma >= 0.0 && sim.noise_sigma.is_finite()) {
        return Err(RefineError::InvalidConfig("noise sigma must be finite and nonnegative".into()));
    }
    let cx = sim.width as f64 / 2.0;
    let cy = sim.height as f64 / 2.0;
    let k = CameraIntrinsics::new(sim.focal, sim.focal, cx, cy, sim.width, sim.height, 1e-3)
        .map_err(|e| RefineError::InvalidConfig(e.to_string()))?;
    let jobs: Vec<(usize, u64)> = (0..meshes.len())
        .flat_map(|m| (0..sim.runs_per_mesh).map(move |i| (m, (m * sim.runs_per_mesh + i) as u64)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(m, offset)| run_one(&meshes[m].0, &meshes[m].1, sim.seed.wrapping_add(offset), sim, cfg, &k))
        .collect::<Result<Vec<_>, _>>()?;
    let its: Vec<f64> = runs.iter().filter_map(|r| r.iterations_to_converge.map(|i| i as f64)).collect();
    let converged_fraction = if runs.is_empty() { 0.0 } else { its.len() as f64 / runs.len() as f64 };
    Ok(SimulationReport {
        mean_iterations: (!its.is_empty()).then(|| its.iter().sum::<f64>() / its.len() as f64),
        converged_fraction,
        runs,
    })
}
