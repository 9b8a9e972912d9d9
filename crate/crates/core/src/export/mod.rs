//! Label propagation to every frame and dataset writing: per-frame camera-frame
//! poses, occlusion-aware id masks, boxes and a JSON manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! scene_meta.json                header: scene id, conventions, intrinsics, objects
//! labels.json                    full manifest
//! frames/NNNNNN.mask.png         visible id map per frame
//! frames/NNNNNN.amodal.III.png   optional per-object amodal mask
//! ```

mod evaluate;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::ingest::Scene;
use crate::raster::{mask_bbox, render_label_map, render_silhouette, LabelMap, LabelledObject, PixelBox, RasterError};

pub use evaluate::{evaluate_manifests, EvaluationReport, FrameObjectEvaluation, ObjectEvaluation};

pub const MANIFEST_FILE: &str = "labels.json";
pub const META_FILE: &str = "scene_meta.json";
pub const FRAMES_DIR: &str = "frames";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("object {0} has a non-finite pose")]
    UnlabelledObject(u16),
    #[error("object id {0} does not fit in an 8-bit mask")]
    IdOverflow(u16),
    #[error("frame {0} is not in the scene")]
    UnknownFrame(u32),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("raster: {0}")]
    Raster(#[from] RasterError),
    #[error("evaluation: {0}")]
    Evaluate(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Scene paths may be relative to the working directory, so the manifest
/// stores them absolute.
fn portable_path(p: &Path) -> String {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskBitDepth {
    #[serde(rename = "8")]
    Eight,
    #[default]
    #[serde(rename = "16")]
    Sixteen,
}

impl MaskBitDepth {
    pub fn bits(self) -> u8 {
        match self {
            MaskBitDepth::Eight => 8,
            MaskBitDepth::Sixteen => 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportOptions {
    pub scene_id: String,
    pub mask_bit_depth: MaskBitDepth,
    /// Frame ids to export; all frames when `None`.
    pub frames: Option<Vec<u32>>,
    /// Also write one unoccluded binary mask per visible object.
    pub amodal_masks: bool,
    /// Worker threads; the global pool when `None`.
    pub jobs: Option<usize>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            scene_id: "scene".into(),
            mask_bit_depth: MaskBitDepth::Sixteen,
            frames: None,
            amodal_masks: false,
            jobs: None,
        }
    }
}

/// Conventions written into every manifest so the output is self-describing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub pose: String,
    pub rotation: String,
    pub units: String,
    pub camera_frame: String,
    pub bbox: String,
    pub mask: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            pose: "pose_cam maps object coordinates to camera coordinates".into(),
            rotation: "unit quaternion [w, x, y, z] with w >= 0".into(),
            units: "meters".into(),
            camera_frame: "+x right, +y down, +z forward".into(),
            bbox: "inclusive pixel bounds xmin, ymin, xmax, ymax".into(),
            mask: "pixel value = object id, 0 = background, occlusion-aware".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub id: u16,
    pub name: String,
    pub mesh: String,
    /// Factor from mesh file units to meters.
    pub unit_scale: f64,
    /// Meters.
    pub diameter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObjectLabel {
    pub id: u16,
    pub pose_cam: RigidTransform,
    pub bbox: Option<PixelBox>,
    pub visible_px: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amodal_mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame_id: u32,
    pub rgb: String,
    /// Relative to the output directory.
    pub mask: String,
    /// Set when the frame's photograph was missing at export time.
    #[serde(default)]
    pub rgb_missing: bool,
    pub objects: Vec<FrameObjectLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub version: u32,
    pub scene_id: String,
    pub conventions: Conventions,
    pub intrinsics: CameraIntrinsics,
    pub mask_bit_depth: u8,
    pub objects: Vec<ManifestObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(flatten)]
    pub meta: SceneMeta,
    pub frames: Vec<ManifestFrame>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, ExportError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ExportError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn frames_missing_rgb(&self) -> Vec<u32> {
        self.frames.iter().filter(|f| f.rgb_missing).map(|f| f.frame_id).collect()
    }
}

/// `T_cam_obj = (T_world_cam)⁻¹ · T_world_obj`.
pub fn object_pose_in_camera(pose_world: &RigidTransform, cam_to_world: &RigidTransform) -> RigidTransform {
    cam_to_world.inverse().compose(pose_world)
}

/// Occlusion-aware label map of camera-frame object poses. This is the exact
/// render used for exported masks, so it also re-renders a loaded manifest.
pub fn render_frame_labels(
    scene_objects: &[(u16, &crate::geometry::TriangleMesh)],
    labels: &[FrameObjectLabel],
    k: &CameraIntrinsics,
) -> Result<LabelMap, RasterError> {
    let objs: Vec<LabelledObject> = labels
        .iter()
        .filter_map(|l| {
            scene_objects.iter().find(|(id, _)| *id == l.id).map(|(id, mesh)| LabelledObject {
                id: *id,
                mesh,
                pose_world: l.pose_cam,
            })
        })
        .collect();
    render_label_map(&objs, &RigidTransform::identity(), k)
}

pub fn mask_file_name(frame_id: u32) -> String {
    format!("{FRAMES_DIR}/{frame_id:06}.mask.png")
}

fn amodal_file_name(frame_id: u32, object_id: u16) -> String {
    format!("{FRAMES_DIR}/{frame_id:06}.amodal.{object_id:03}.png")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn export_frame(
    scene: &Scene,
    frame_index: usize,
    out_dir: &Path,
    options: &ExportOptions,
) -> Result<ManifestFrame, ExportError> {
    let frame = &scene.frames[frame_index];
    let k = &scene.intrinsics;
    let labels: Vec<FrameObjectLabel> = scene
        .objects
        .iter()
        .map(|o| FrameObjectLabel {
            id: o.object_id,
            pose_cam: object_pose_in_camera(&o.pose_world, &frame.camera_to_world),
            bbox: None,
            visible_px: 0,
            amodal_mask: None,
        })
        .collect();
    let meshes: Vec<(u16, &crate::geometry::TriangleMesh)> =
        scene.objects.iter().map(|o| (o.object_id, o.mesh.as_ref())).collect();
    let label_map = render_frame_labels(&meshes, &labels, k)?;
    let png = match options.mask_bit_depth {
        MaskBitDepth::Eight => label_map.to_png_8bit()?,
        MaskBitDepth::Sixteen => label_map.to_png_16bit()?,
    };
    let mask = mask_file_name(frame.frame_id);
    write_file(&out_dir.join(&mask), &png)?;

    let mut counts = std::collections::HashMap::<u16, u64>::new();
    for &id in label_map.ids() {
        if id != 0 {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut objects = Vec::with_capacity(labels.len());
    for (label, o) in labels.into_iter().zip(&scene.objects) {
        let visible_px = counts.get(&label.id).copied().unwrap_or(0);
        let bbox = if visible_px > 0 { mask_bbox(&label_map.mask_of(label.id)) } else { None };
        let mut amodal_mask = None;
        if options.amodal_masks {
            let m = render_silhouette(&o.mesh, &label.pose_cam, &RigidTransform::identity(), k);
            if !m.is_empty() {
                let name = amodal_file_name(frame.frame_id, label.id);
                write_file(&out_dir.join(&name), &m.to_png_8bit()?)?;
                amodal_mask = Some(name);
            }
        }
        objects.push(FrameObjectLabel {
            bbox,
            visible_px,
            amodal_mask,
            ..label
        });
    }
    let rgb_missing = !frame.rgb_path.is_file();
    if rgb_missing {
        log::warn!("frame {}: missing image {}", frame.frame_id, frame.rgb_path.display());
    }
    Ok(ManifestFrame {
        frame_id: frame.frame_id,
        rgb: portable_path(&frame.rgb_path),
        mask,
        rgb_missing,
        objects,
    })
}

/// Renders and writes every selected frame in parallel, then writes the
/// manifest from a single thread. Output bytes depend only on the inputs.
pub fn export_scene(scene: &Scene, out_dir: &Path, options: &ExportOptions) -> Result<DatasetManifest, ExportError> {
    for o in &scene.objects {
        if !o.pose_world.is_finite() {
            return Err(ExportError::UnlabelledObject(o.object_id));
        }
        if options.mask_bit_depth == MaskBitDepth::Eight && o.object_id > 255 {
            return Err(ExportError::IdOverflow(o.object_id));
        }
    }
    let indices: Vec<usize> = match &options.frames {
        None => (0..scene.frames.len()).collect(),
        Some(ids) => {
            let wanted: BTreeSet<u32> = ids.iter().copied().collect();
            for id in &wanted {
                if scene.frame(*id).is_none() {
                    return Err(ExportError::UnknownFrame(*id));
                }
            }
            (0..scene.frames.len()).filter(|&i| wanted.contains(&scene.frames[i].frame_id)).collect()
        }
    };
    let frames_dir = out_dir.join(FRAMES_DIR);
    std::fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;

    let run = || -> Result<Vec<ManifestFrame>, ExportError> {
        indices.par_iter().map(|&i| export_frame(scene, i, out_dir, options)).collect()
    };
    let frames = match options.jobs {
        None => run()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ExportError::ThreadPool(e.to_string()))?
            .install(run)?,
    };

    let meta = SceneMeta {
        version: MANIFEST_VERSION,
        scene_id: options.scene_id.clone(),
        conventions: Conventions::default(),
        intrinsics: scene.intrinsics,
        mask_bit_depth: options.mask_bit_depth.bits(),
        objects: scene
            .objects
            .iter()
            .map(|o| ManifestObject {
                id: o.object_id,
                name: o.name.clone(),
                mesh: portable_path(&o.mesh_path),
                unit_scale: o.unit_scale,
                diameter: o.mesh.diameter(),
            })
            .collect(),
    };
    write_json(&out_dir.join(META_FILE), &meta)?;
    let manifest = DatasetManifest { meta, frames };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Resolves a manifest-relative path.
pub fn manifest_path(manifest_dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}
