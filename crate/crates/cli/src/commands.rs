use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde_json::json;

use labelkit_core::export::{evaluate_manifests, export_scene, DatasetManifest, ExportOptions, MaskBitDepth};
use labelkit_core::geometry::{shapes, CameraIntrinsics, TriangleMesh};
use labelkit_core::ingest::{
    apply_scale, fit_plane_ransac, parse_colmap_images, parse_colmap_points3d, parse_tum_trajectory,
    solve_scale_from_depth, xy_alignment_transform, FrameConfig, ObjectConfig, RawDepthImage, Scene, SceneConfig,
    SparseTrack, TrajectoryFormat, TrajectoryRef,
};
use labelkit_core::raster::{BinaryMask, DepthMap};
use labelkit_core::refine::{refine as run_refine, simulate_annotation, ReferenceView, RefineConfig, SimulationConfig};
use labelkit_core::tsdf::{create_volume, extract_surface_points, integrate_depth, points_to_ply};

use crate::{
    BitDepth, CliError, EvaluateArgs, ExportArgs, FuseArgs, ImportArgs, RefineArgs, ServeArgs, SimulateArgs,
    TrajectoryKind,
};

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("json", e))?;
    text.push('\n');
    write_text(path, &text)
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::path::absolute(path).map_err(io_err(path))
}

fn load_scene(path: &Path) -> CliResult<Scene> {
    Scene::load(path).map_err(|e| CliError::new("ingest", e))
}

fn load_refine_config(path: Option<&Path>, max_iterations: Option<usize>) -> CliResult<RefineConfig> {
    let mut cfg = match path {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::new("invalid_config", format!("{}: {e}", p.display())))?,
        None => RefineConfig::default(),
    };
    if let Some(n) = max_iterations {
        cfg.max_iterations = n;
    }
    cfg.validate().map_err(|e| CliError::new("invalid_config", e))?;
    Ok(cfg)
}

/// `ID:NAME:MESH_PATH[:UNIT_SCALE]`.
pub fn parse_object_spec(s: &str) -> Result<ObjectConfig, String> {
    let parts: Vec<&str> = s.splitn(4, ':').collect();
    if parts.len() < 3 {
        return Err(format!("expected ID:NAME:MESH_PATH[:UNIT_SCALE], got {s:?}"));
    }
    let id: u16 = parts[0].parse().map_err(|_| format!("bad object id {:?}", parts[0]))?;
    let unit_scale = match parts.get(3) {
        Some(v) => v.parse().map_err(|_| format!("bad unit scale {v:?}"))?,
        None => 1.0,
    };
    Ok(ObjectConfig {
        id,
        name: parts[1].to_string(),
        mesh: PathBuf::from(parts[2]),
        unit_scale,
        pose: None,
    })
}

/// `x,y,z`.
pub fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| format!("expected three finite numbers x,y,z, got {s:?}"))?;
    <[f64; 3]>::try_from(v).map_err(|_| format!("expected three numbers x,y,z, got {s:?}"))
}

/// `FRAME_ID=PATH`.
pub fn parse_mask_spec(s: &str) -> Result<(u32, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or_else(|| format!("expected FRAME_ID=PATH, got {s:?}"))?;
    let id = id.parse().map_err(|_| format!("bad frame id {id:?}"))?;
    Ok((id, PathBuf::from(path)))
}

fn list_files(dir: &Path, exts: &[&str]) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn depth_for(depth_dir: Option<&Path>, rgb: &Path) -> Option<PathBuf> {
    let stem = rgb.file_stem()?;
    let p = depth_dir?.join(stem).with_extension("png");
    p.is_file().then_some(p)
}

pub fn import(a: ImportArgs) -> CliResult {
    let k: CameraIntrinsics = serde_json::from_str(&read_text(&a.intrinsics)?)
        .map_err(|e| CliError::new("json", format!("{}: {e}", a.intrinsics.display())))?;
    let rgb_dir = absolute(&a.rgb_dir)?;
    let depth_dir = a.depth_dir.as_deref().map(absolute).transpose()?;
    let traj_path = absolute(&a.trajectory)?;
    let out = absolute(&a.out)?;
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = read_text(&traj_path)?;
    let ingest = |e| CliError::new("ingest", e);

    let mut colmap_images = Vec::new();
    let (format, frames): (TrajectoryFormat, Vec<FrameConfig>) = match a.format {
        TrajectoryKind::Tum => {
            let poses = parse_tum_trajectory(&text).map_err(ingest)?;
            let images = list_files(&rgb_dir, &["png", "jpg", "jpeg"])?;
            if images.len() != poses.len() {
                return Err(CliError::new(
                    "mismatch",
                    format!("{} images in {} but {} trajectory poses", images.len(), rgb_dir.display(), poses.len()),
                ));
            }
            let frames = images
                .iter()
                .zip(&poses)
                .enumerate()
                .map(|(i, (img, p))| FrameConfig {
                    id: i as u32,
                    rgb: img.clone(),
                    depth: depth_for(depth_dir.as_deref(), img),
                    timestamp: Some(p.timestamp),
                    pose: None,
                    trajectory_index: Some(i),
                })
                .collect();
            (TrajectoryFormat::Tum, frames)
        }
        TrajectoryKind::Colmap => {
            colmap_images = parse_colmap_images(&text).map_err(ingest)?;
            let mut order: Vec<usize> = (0..colmap_images.len()).collect();
            order.sort_by_key(|&i| colmap_images[i].image_id);
            let frames = order
                .into_iter()
                .map(|i| {
                    let rgb = rgb_dir.join(&colmap_images[i].name);
                    FrameConfig {
                        id: colmap_images[i].image_id,
                        depth: depth_for(depth_dir.as_deref(), &rgb),
                        rgb,
                        timestamp: None,
                        pose: None,
                        trajectory_index: Some(i),
                    }
                })
                .collect();
            (TrajectoryFormat::Colmap, frames)
        }
    };
    let cfg = SceneConfig {
        intrinsics: k,
        scale_applied: 1.0,
        trajectory: Some(TrajectoryRef {
            format,
            path: traj_path.clone(),
        }),
        frames,
        objects: a.objects,
    };
    let cwd = absolute(Path::new("."))?;
    let mut scene = Scene::from_config(cfg, &cwd).map_err(ingest)?;

    let mut tracks: Vec<SparseTrack> = match &a.points3d {
        None => Vec::new(),
        Some(p) => {
            if colmap_images.is_empty() {
                return Err(CliError::new("invalid_argument", "--points3d needs --format colmap"));
            }
            parse_colmap_points3d(&read_text(p)?, &colmap_images).map_err(ingest)?
        }
    };
    if a.solve_scale {
        if tracks.is_empty() {
            return Err(CliError::new("invalid_argument", "--solve-scale needs --points3d with tracks"));
        }
        let mut depths: HashMap<u32, RawDepthImage> = HashMap::new();
        for f in &scene.frames {
            if let Some(d) = &f.depth_path {
                depths.insert(f.frame_id, RawDepthImage::load(d).map_err(ingest)?);
            }
        }
        let s = solve_scale_from_depth(&tracks, &scene.frames, &k, &depths).map_err(ingest)?;
        apply_scale(&mut scene, &mut tracks, s).map_err(ingest)?;
        println!("solved scale {s:.6}");
    }
    if let Some(tol_mm) = a.align_plane_tol_mm {
        if tracks.is_empty() {
            return Err(CliError::new("invalid_argument", "--align-plane-tol-mm needs --points3d with tracks"));
        }
        let pts: Vec<Vector3<f64>> = tracks.iter().map(|t| t.point_world).collect();
        let plane = fit_plane_ransac(&pts, tol_mm * 1e-3, a.ransac_iterations, a.seed).map_err(ingest)?;
        let t = xy_alignment_transform(&plane);
        for f in &mut scene.frames {
            f.camera_to_world = t.compose(&f.camera_to_world);
        }
        println!("aligned plane with {} inliers", plane.inlier_indices.len());
    }
    scene.config_dir = out_dir;
    scene.save(&out).map_err(ingest)?;
    println!("wrote {} ({} frames, {} objects)", out.display(), scene.frames.len(), scene.objects.len());
    Ok(())
}

pub fn fuse(a: FuseArgs) -> CliResult {
    let scene = load_scene(&a.scene)?;
    let lo = Vector3::from(a.bounds_min_m);
    let hi = Vector3::from(a.bounds_max_m);
    let voxel = a.voxel_size_mm * 1e-3;
    if !(voxel > 0.0) || (hi - lo).iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::new("invalid_argument", "bounds must be increasing and the voxel size positive"));
    }
    let dims = [0, 1, 2].map(|i| ((hi[i] - lo[i]) / voxel).ceil() as usize + 1);
    let tsdf = |e| CliError::new("tsdf", e);
    let mut vol = create_volume(lo, voxel, dims, a.truncation_mm * 1e-3).map_err(tsdf)?;
    let k = scene.intrinsics;
    let mut used = 0;
    for f in &scene.frames {
        let Some(path) = &f.depth_path else { continue };
        let depth = DepthMap::load_png(path, k.depth_scale).map_err(|e| CliError::new("raster", e))?;
        integrate_depth(&mut vol, &depth, &k, &f.camera_to_world).map_err(tsdf)?;
        used += 1;
    }
    if used == 0 {
        return Err(CliError::new("no_depth", "no frame of the scene has a depth image"));
    }
    let points = extract_surface_points(&vol);
    write_text(&a.out, &points_to_ply(&points))?;
    println!("fused {used} depth frames into {dims:?} voxels, {} surface points", points.len());
    Ok(())
}

pub fn refine(a: RefineArgs) -> CliResult {
    let scene = load_scene(&a.scene)?;
    let object = scene
        .object(a.object)
        .ok_or_else(|| CliError::new("unknown_object", format!("scene has no object {}", a.object)))?;
    let cfg = load_refine_config(a.config.as_deref(), a.max_iterations)?;
    let mut masks: HashMap<u32, BinaryMask> = HashMap::new();
    for (id, path) in &a.masks {
        let id = *id;
        if scene.frame(id).is_none() {
            return Err(CliError::new("unknown_frame", format!("scene has no frame {id}")));
        }
        masks.insert(id, BinaryMask::load(path).map_err(|e| CliError::new("raster", e))?);
    }
    let mut frames = Vec::new();
    let mut views = Vec::new();
    for f in &scene.frames {
        if let Some(m) = masks.remove(&f.frame_id) {
            frames.push(f.frame_id);
            views.push(ReferenceView {
                cam_to_world: f.camera_to_world,
                reference: m,
            });
        }
    }
    let (pose, trace) = run_refine(&object.pose_world, &object.mesh, &views, &scene.intrinsics, &cfg)
        .map_err(|e| CliError::new("refine", e))?;
    let result = json!({
        "object_id": a.object,
        "frames": frames,
        "initial_pose": object.pose_world,
        "pose": pose,
        "initial_score": trace.iterations.first().map(|e| e.score_before),
        "final_score": trace.iterations.last().map(|e| e.score_after),
        "trace": trace,
    });
    write_json(&a.out, &result)?;
    println!(
        "{} iterations, score {:.4} -> {:.4}",
        trace.iterations.len(),
        result["initial_score"].as_f64().unwrap_or(f64::NAN),
        result["final_score"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_meshes(dir: Option<&Path>) -> CliResult<Vec<(String, TriangleMesh)>> {
    let Some(dir) = dir else { return Ok(shapes::procedural_set()) };
    let files = list_files(dir, &["obj", "ply"])?;
    if files.is_empty() {
        return Err(CliError::new("no_meshes", format!("no .obj or .ply files in {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mesh = TriangleMesh::load(p).map_err(|e| CliError::new("geometry", format!("{}: {e}", p.display())))?;
            Ok((name, mesh))
        })
        .collect()
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let meshes = load_meshes(a.meshes.as_deref())?;
    let cfg = load_refine_config(a.config.as_deref(), a.max_iterations)?;
    let sim = SimulationConfig {
        n_cameras: a.cameras,
        noise_sigma: a.noise_sigma_cm * 1e-2,
        runs_per_mesh: a.runs_per_mesh,
        seed: a.seed,
        random_initial_orientation: !a.keep_orientation,
        width: a.width,
        height: a.height,
        focal: a.focal_px,
        radius_factor: a.radius_factor,
        ..SimulationConfig::default()
    };
    let report = simulate_annotation(&meshes, &sim, &cfg).map_err(|e| CliError::new("refine", e))?;
    write_json(&a.out, &report)?;
    let converged = report.runs.iter().filter(|r| r.iterations_to_converge.is_some()).count();
    match report.mean_iterations {
        Some(m) => println!("{converged}/{} runs converged, mean {m:.2} iterations", report.runs.len()),
        None => println!("0/{} runs converged", report.runs.len()),
    }
    Ok(())
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let export = |e| CliError::new("export", e);
    let pred = DatasetManifest::load(&a.pred).map_err(export)?;
    let gt = DatasetManifest::load(&a.gt).map_err(export)?;
    let report = evaluate_manifests(&pred, &manifest_dir(&a.pred), &gt, &manifest_dir(&a.gt), a.auc_steps)
        .map_err(|e| CliError::new("evaluate", e))?;
    for o in &report.objects {
        println!(
            "object {} ({}): {} frames, ADD AUC@0.1d {:.4}, ADD-S AUC@0.1d {:.4}, mean positional {:.4} m",
            o.id, o.name, o.frames, o.add_auc_01d, o.adds_auc_01d, o.mean_positional
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub fn export(a: ExportArgs, jobs: Option<usize>) -> CliResult {
    let scene = load_scene(&a.scene)?;
    let scene_id = a.scene_id.unwrap_or_else(|| {
        a.scene
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "scene".into())
    });
    let options = ExportOptions {
        scene_id,
        mask_bit_depth: match a.mask_bit_depth {
            BitDepth::Eight => MaskBitDepth::Eight,
            BitDepth::Sixteen => MaskBitDepth::Sixteen,
        },
        frames: a.frames,
        amodal_masks: a.amodal_masks,
        jobs,
    };
    let manifest = export_scene(&scene, &a.out, &options).map_err(|e| CliError::new("export", e))?;
    let missing = manifest.frames_missing_rgb();
    if !missing.is_empty() {
        eprintln!("warning: {} frames have no RGB image: {missing:?}", missing.len());
    }
    println!("exported {} frames to {}", manifest.frames.len(), a.out.display());
    Ok(())
}

pub fn serve(a: ServeArgs) -> CliResult {
    let state = labelkit_service::AppState::load_root(&a.scene_root).map_err(|e| CliError::new("ingest", e))?;
    println!("serving {} scenes on http://{}", state.ids().len(), a.bind);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e))?;
    rt.block_on(labelkit_service::serve(a.bind, state))
        .map_err(|e| CliError::new("io", format!("{}: {e}", a.bind)))
}
