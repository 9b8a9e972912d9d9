//! Batch comparison of a predicted label manifest against a ground-truth one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{manifest_path, DatasetManifest, ExportError};
use crate::geometry::{RigidTransform, TriangleMesh};
use crate::metrics::{accuracy_auc, feature_pixel_distance, pose_errors, FeatureConfig, MetricsError};
use crate::raster::{mask_iou, render_shaded, LabelMap};

/// Feature matches farther apart than this are discarded (pixels).
pub const FEATURE_GATE_PX: f64 = 10.0;
/// Fixed AUC range in meters, next to the per-object 0.1 × diameter range.
pub const FIXED_AUC_MAX: f64 = 0.1;
const SHADE_AMBIENT: u8 = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObjectEvaluation {
    pub frame_id: u32,
    pub object_id: u16,
    pub positional: f64,
    pub rotational: f64,
    pub add: f64,
    pub adds: f64,
    /// Visible-mask IoU; `None` when the object is absent from both masks.
    pub mask_iou: Option<f64>,
    /// `None` when too few features survive matching.
    pub feature_px: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvaluation {
    pub id: u16,
    pub name: String,
    pub diameter: f64,
    pub frames: usize,
    pub mean_positional: f64,
    pub mean_rotational: f64,
    pub add_auc_01d: f64,
    pub adds_auc_01d: f64,
    pub add_auc_10cm: f64,
    pub adds_auc_10cm: f64,
    pub mean_mask_iou: Option<f64>,
    pub mean_feature_px: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub objects: Vec<ObjectEvaluation>,
    pub per_frame: Vec<FrameObjectEvaluation>,
    /// Object ids present in only one of the manifests.
    pub unmatched_objects: Vec<u16>,
    /// Frame ids present in only one of the manifests.
    pub unmatched_frames: Vec<u32>,
}

fn eval_err(e: impl std::fmt::Display) -> ExportError {
    ExportError::Evaluate(e.to_string())
}

fn load_mask(dir: &Path, rel: &str) -> Result<LabelMap, ExportError> {
    let path = manifest_path(dir, rel);
    let bytes = std::fs::read(&path).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(LabelMap::from_png_bytes(&bytes)?)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Compares matching (frame, object) labels of `pred` against `gt`. Meshes,
/// diameters and intrinsics come from `gt`; paths resolve against each
/// manifest's directory. Fails when no object id or no frame id is shared.
pub fn evaluate_manifests(
    pred: &DatasetManifest,
    pred_dir: &Path,
    gt: &DatasetManifest,
    gt_dir: &Path,
    auc_steps: usize,
) -> Result<EvaluationReport, ExportError> {
    let pred_ids: BTreeSet<u16> = pred.meta.objects.iter().map(|o| o.id).collect();
    let gt_ids: BTreeSet<u16> = gt.meta.objects.iter().map(|o| o.id).collect();
    let shared: BTreeSet<u16> = pred_ids.intersection(&gt_ids).copied().collect();
    if shared.is_empty() {
        return Err(ExportError::Evaluate(format!(
            "object ids do not overlap: prediction has {pred_ids:?}, ground truth has {gt_ids:?}"
        )));
    }
    let unmatched_objects: Vec<u16> = pred_ids.symmetric_difference(&gt_ids).copied().collect();
    let pred_frames: BTreeMap<u32, usize> = pred.frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
    let gt_frames: BTreeMap<u32, usize> = gt.frames.iter().enumerate().map(|(i, f)| (f.frame_id, i)).collect();
    let frame_pairs: Vec<(usize, usize)> = gt_frames
        .iter()
        .filter_map(|(id, &g)| pred_frames.get(id).map(|&p| (p, g)))
        .collect();
    if frame_pairs.is_empty() {
        return Err(ExportError::Evaluate("frame ids do not overlap".into()));
    }
    let mut unmatched_frames: Vec<u32> = pred_frames.keys().filter(|id| !gt_frames.contains_key(id)).copied().collect();
    unmatched_frames.extend(gt_frames.keys().filter(|id| !pred_frames.contains_key(id)));
    unmatched_frames.sort_unstable();

    let mut meshes: HashMap<u16, TriangleMesh> = HashMap::new();
    for o in gt.meta.objects.iter().filter(|o| shared.contains(&o.id)) {
        let mut mesh = TriangleMesh::load(&manifest_path(gt_dir, &o.mesh)).map_err(eval_err)?;
        if o.unit_scale != 1.0 {
            mesh = mesh.scaled(o.unit_scale).map_err(eval_err)?;
        }
        meshes.insert(o.id, mesh);
    }
    let k = gt.meta.intrinsics;
    let feature_cfg = FeatureConfig::default();

    let per_frame: Vec<Vec<FrameObjectEvaluation>> = frame_pairs
        .par_iter()
        .map(|&(pi, gi)| -> Result<Vec<FrameObjectEvaluation>, ExportError> {
            let (pf, gf) = (&pred.frames[pi], &gt.frames[gi]);
            let pred_mask = load_mask(pred_dir, &pf.mask)?;
            let gt_mask = load_mask(gt_dir, &gf.mask)?;
            let mut out = Vec::new();
            for gl in gf.objects.iter().filter(|l| shared.contains(&l.id)) {
                let Some(pl) = pf.objects.iter().find(|l| l.id == gl.id) else { continue };
                let mesh = &meshes[&gl.id];
                let errs = pose_errors(mesh.vertices(), &pl.pose_cam, &gl.pose_cam).map_err(eval_err)?;
                let (pm, gm) = (pred_mask.mask_of(gl.id), gt_mask.mask_of(gl.id));
                let iou = if pm.is_empty() && gm.is_empty() { None } else { Some(mask_iou(&pm, &gm)?) };
                let id = RigidTransform::identity();
                let a = render_shaded(mesh, &pl.pose_cam, &id, &k, SHADE_AMBIENT);
                let b = render_shaded(mesh, &gl.pose_cam, &id, &k, SHADE_AMBIENT);
                let feature_px = match feature_pixel_distance(&a, &b, FEATURE_GATE_PX, &feature_cfg) {
                    Ok(r) => Some(r.mean_distance_px),
                    Err(MetricsError::InsufficientMatches(_)) => None,
                    Err(e) => return Err(eval_err(e)),
                };
                out.push(FrameObjectEvaluation {
                    frame_id: gf.frame_id,
                    object_id: gl.id,
                    positional: errs.positional,
                    rotational: errs.rotational,
                    add: errs.add,
                    adds: errs.adds,
                    mask_iou: iou,
                    feature_px,
                });
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let per_frame: Vec<FrameObjectEvaluation> = per_frame.into_iter().flatten().collect();

    let mut objects = Vec::new();
    for o in gt.meta.objects.iter().filter(|o| shared.contains(&o.id)) {
        let rows: Vec<&FrameObjectEvaluation> = per_frame.iter().filter(|r| r.object_id == o.id).collect();
        if rows.is_empty() {
            continue;
        }
        let adds: Vec<f64> = rows.iter().map(|r| r.add).collect();
        let addss: Vec<f64> = rows.iter().map(|r| r.adds).collect();
        let auc = |e: &[f64], max: f64| accuracy_auc(e, max, auc_steps).map(|c| c.auc).map_err(eval_err);
        objects.push(ObjectEvaluation {
            id: o.id,
            name: o.name.clone(),
            diameter: o.diameter,
            frames: rows.len(),
            mean_positional: mean(rows.iter().map(|r| r.positional)).unwrap_or(0.0),
            mean_rotational: mean(rows.iter().map(|r| r.rotational)).unwrap_or(0.0),
            add_auc_01d: auc(&adds, 0.1 * o.diameter)?,
            adds_auc_01d: auc(&addss, 0.1 * o.diameter)?,
            add_auc_10cm: auc(&adds, FIXED_AUC_MAX)?,
            adds_auc_10cm: auc(&addss, FIXED_AUC_MAX)?,
            mean_mask_iou: mean(rows.iter().filter_map(|r| r.mask_iou)),
            mean_feature_px: mean(rows.iter().filter_map(|r| r.feature_px)),
        });
    }
    Ok(EvaluationReport {
        objects,
        per_frame,
        unmatched_objects,
        unmatched_frames,
    })
}
