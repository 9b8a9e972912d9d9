//! Scene config files and the in-memory scene they describe.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{parse_colmap_images, parse_tum_trajectory, IngestError};
use crate::geometry::{CameraIntrinsics, RigidTransform, TriangleMesh};

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub timestamp: Option<f64>,
    pub camera_to_world: RigidTransform,
    pub rgb_path: PathBuf,
    pub depth_path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct ObjectLabel {
    /// Nonzero; 0 is the background label.
    pub object_id: u16,
    pub name: String,
    /// Mesh in meters, i.e. after `unit_scale` has been applied.
    pub mesh: Arc<TriangleMesh>,
    pub mesh_path: PathBuf,
    pub unit_scale: f64,
    pub pose_world: RigidTransform,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub frames: Vec<FrameRecord>,
    pub objects: Vec<ObjectLabel>,
    pub intrinsics: CameraIntrinsics,
    pub scale_applied: f64,
    /// Relative paths in the config resolve against this directory.
    pub config_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFormat {
    Tum,
    Colmap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRef {
    pub format: TrajectoryFormat,
    pub path: PathBuf,
}

/// One frame table row. The pose comes from `pose` when present; otherwise from
/// the trajectory file, by `trajectory_index` (TUM, default: row position) or by
/// image name matching the rgb file name (COLMAP).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub id: u32,
    pub rgb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<RigidTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectConfig {
    pub id: u16,
    pub name: String,
    pub mesh: PathBuf,
    #[serde(default = "one")]
    pub unit_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<RigidTransform>,
}

fn one() -> f64 {
    1.0
}

/// On-disk scene description.
///
/// Trajectory-file poses are in reconstruction units and get multiplied by
/// `scale_applied` on load; explicit `pose` entries are already metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "one")]
    pub scale_applied: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryRef>,
    pub frames: Vec<FrameConfig>,
    #[serde(default)]
    pub objects: Vec<ObjectConfig>,
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn relativize(dir: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        serde_json::from_str(&read_text(path)?).map_err(|e| IngestError::Json {
            path: path.display().to_string(),
            source: e,
        })
    }
}

impl Scene {
    /// Loads a scene config, its trajectory file and object meshes.
    pub fn load(path: &Path) -> Result<Scene, IngestError> {
        let cfg = SceneConfig::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scene::from_config(cfg, &dir)
    }

    pub fn from_config(cfg: SceneConfig, dir: &Path) -> Result<Scene, IngestError> {
        if !(cfg.scale_applied > 0.0 && cfg.scale_applied.is_finite()) {
            return Err(IngestError::InvalidScale(cfg.scale_applied));
        }
        let scale = cfg.scale_applied;
        let (by_index, by_name) = match &cfg.trajectory {
            None => (Vec::new(), HashMap::new()),
            Some(t) => {
                let text = read_text(&resolve(dir, &t.path))?;
                match t.format {
                    TrajectoryFormat::Tum => (
                        parse_tum_trajectory(&text)?.into_iter().map(|p| p.camera_to_world).collect(),
                        HashMap::new(),
                    ),
                    TrajectoryFormat::Colmap => {
                        let images = parse_colmap_images(&text)?;
                        let names = images.iter().map(|i| (i.name.clone(), i.camera_to_world)).collect();
                        (images.into_iter().map(|i| i.camera_to_world).collect(), names)
                    }
                }
            }
        };
        let scaled = |p: &RigidTransform| p.with_translation(p.translation() * scale);
        let mut frames = Vec::with_capacity(cfg.frames.len());
        for (row, f) in cfg.frames.iter().enumerate() {
            let pose = if let Some(p) = f.pose {
                p
            } else {
                let file_name = f.rgb.file_name().and_then(|n| n.to_str()).unwrap_or("");
                let from_traj = match (f.trajectory_index, cfg.trajectory.as_ref().map(|t| t.format)) {
                    (Some(i), _) => by_index.get(i),
                    (None, Some(TrajectoryFormat::Colmap)) => by_name
                        .get(f.rgb.to_str().unwrap_or(""))
                        .or_else(|| by_name.get(file_name)),
                    (None, _) => by_index.get(row),
                };
                scaled(from_traj.ok_or_else(|| {
                    IngestError::InvalidScene(format!("frame {} has no pose in the config or trajectory", f.id))
                })?)
            };
            frames.push(FrameRecord {
                frame_id: f.id,
                timestamp: f.timestamp,
                camera_to_world: pose,
                rgb_path: resolve(dir, &f.rgb),
                depth_path: f.depth.as_ref().map(|d| resolve(dir, d)),
            });
        }
        let mut objects = Vec::with_capacity(cfg.objects.len());
        for o in &cfg.objects {
            let mesh_path = resolve(dir, &o.mesh);
            if !(o.unit_scale > 0.0 && o.unit_scale.is_finite()) {
                return Err(IngestError::InvalidScene(format!("object {} has invalid unit_scale", o.id)));
            }
            let mut mesh = TriangleMesh::load(&mesh_path)?;
            if o.unit_scale != 1.0 {
                mesh = mesh.scaled(o.unit_scale)?;
            }
            objects.push(ObjectLabel {
                object_id: o.id,
                name: o.name.clone(),
                mesh: Arc::new(mesh),
                mesh_path,
                unit_scale: o.unit_scale,
                pose_world: o.pose.unwrap_or_default(),
            });
        }
        let scene = Scene {
            frames,
            objects,
            intrinsics: cfg.intrinsics,
            scale_applied: cfg.scale_applied,
            config_dir: dir.to_path_buf(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.frames.is_empty() {
            return Err(IngestError::InvalidScene("a scene needs at least one frame".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id) {
                return Err(IngestError::InvalidScene(format!("duplicate frame id {}", f.frame_id)));
            }
            if f.rgb_path.as_os_str().is_empty() {
                return Err(IngestError::InvalidScene(format!("frame {} has an empty rgb path", f.frame_id)));
            }
            if !f.camera_to_world.is_finite() {
                return Err(IngestError::InvalidScene(format!("frame {} has a non-finite pose", f.frame_id)));
            }
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if o.object_id == 0 {
                return Err(IngestError::InvalidScene("object id 0 is reserved for background".into()));
            }
            if !ids.insert(o.object_id) {
                return Err(IngestError::InvalidScene(format!("duplicate object id {}", o.object_id)));
            }
            if !o.pose_world.is_finite() {
                return Err(IngestError::InvalidScene(format!("object {} has a non-finite pose", o.object_id)));
            }
        }
        Ok(())
    }

    pub fn frame(&self, frame_id: u32) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn object(&self, object_id: u16) -> Option<&ObjectLabel> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn object_mut(&mut self, object_id: u16) -> Option<&mut ObjectLabel> {
        self.objects.iter_mut().find(|o| o.object_id == object_id)
    }

    /// Config with every pose written explicitly and paths relative to `config_dir`.
    pub fn to_config(&self) -> SceneConfig {
        let dir = &self.config_dir;
        SceneConfig {
            intrinsics: self.intrinsics,
            scale_applied: self.scale_applied,
            trajectory: None,
            frames: self
                .frames
                .iter()
                .map(|f| FrameConfig {
                    id: f.frame_id,
                    rgb: relativize(dir, &f.rgb_path),
                    depth: f.depth_path.as_ref().map(|d| relativize(dir, d)),
                    timestamp: f.timestamp,
                    pose: Some(f.camera_to_world),
                    trajectory_index: None,
                })
                .collect(),
            objects: self
                .objects
                .iter()
                .map(|o| ObjectConfig {
                    id: o.object_id,
                    name: o.name.clone(),
                    mesh: relativize(dir, &o.mesh_path),
                    unit_scale: o.unit_scale,
                    pose: Some(o.pose_world),
                })
                .collect(),
        }
    }

    /// Writes the config atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let text = serde_json::to_string_pretty(&self.to_config()).expect("config serializes");
        let tmp = path.with_extension("json.tmp");
        let io = |e| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        };
        std::fs::write(&tmp, text).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }
}
