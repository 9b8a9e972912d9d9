//! Route handlers.

use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use labelkit_core::export::{export_scene, ExportOptions};
use labelkit_core::geometry::RigidTransform;
use labelkit_core::ingest::{ObjectLabel, Scene};
use labelkit_core::raster::{render_silhouette, BinaryMask};
use labelkit_core::refine::{refine, ReferenceView, RefineConfig, RefineError, RefineTrace};

use crate::overlay::{composite, encode_png, overlay_mask, OverlayMode};
use crate::pose::{apply_delta, DeltaSpace, PoseUpdate};
use crate::session::Session;
use crate::{ApiError, AppState, MAX_REFINE_ITERATIONS};

type ApiResult<T> = Result<T, ApiError>;

fn session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.get(id).ok_or_else(|| ApiError::not_found(format!("unknown scene {id:?}")))
}

fn object_id(s: &str) -> ApiResult<u16> {
    s.parse().map_err(|_| ApiError::not_found(format!("unknown object {s:?}")))
}

fn frame_id(s: &str) -> ApiResult<u32> {
    s.parse().map_err(|_| ApiError::not_found(format!("unknown frame {s:?}")))
}

fn unknown_object(id: u16) -> ApiError {
    ApiError::not_found(format!("unknown object {id}"))
}

fn unknown_frame(id: u32) -> ApiError {
    ApiError::not_found(format!("unknown frame {id}"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("internal", e.to_string()))?
}

#[derive(Serialize)]
pub struct ObjectView {
    id: u16,
    name: String,
    mesh: String,
    unit_scale: f64,
    diameter: f64,
    pose: RigidTransform,
}

impl From<&ObjectLabel> for ObjectView {
    fn from(o: &ObjectLabel) -> Self {
        ObjectView {
            id: o.object_id,
            name: o.name.clone(),
            mesh: o.mesh_path.display().to_string(),
            unit_scale: o.unit_scale,
            diameter: o.mesh.diameter(),
            pose: o.pose_world,
        }
    }
}

#[derive(Serialize)]
pub struct PoseResponse {
    object_id: u16,
    pose: RigidTransform,
    version: u64,
}

pub async fn list_scenes(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.ids())
}

pub async fn list_frames(State(state): State<AppState>, Path(scene): Path<String>) -> ApiResult<Json<Value>> {
    let sess = session(&state, &scene)?;
    let st = sess.read();
    let frames: Vec<Value> = st
        .scene
        .frames
        .iter()
        .map(|f| {
            json!({
                "id": f.frame_id,
                "timestamp": f.timestamp,
                "pose": f.camera_to_world,
                "rgb": f.rgb_path.display().to_string(),
            })
        })
        .collect();
    Ok(Json(Value::Array(frames)))
}

pub async fn list_objects(State(state): State<AppState>, Path(scene): Path<String>) -> ApiResult<Json<Value>> {
    let sess = session(&state, &scene)?;
    let st = sess.read();
    let objects: Vec<ObjectView> = st.scene.objects.iter().map(ObjectView::from).collect();
    Ok(Json(json!({
        "version": st.version,
        "dirty": st.dirty,
        "intrinsics": st.scene.intrinsics,
        "objects": objects,
    })))
}

pub async fn get_object(
    State(state): State<AppState>,
    Path((scene, object)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let sess = session(&state, &scene)?;
    let id = object_id(&object)?;
    let st = sess.read();
    let o = st.scene.object(id).ok_or_else(|| unknown_object(id))?;
    let mut v = serde_json::to_value(ObjectView::from(o)).expect("object view serializes");
    v["version"] = json!(st.version);
    Ok(Json(v))
}

fn load_photo(path: &FsPath) -> ApiResult<image::RgbImage> {
    if !path.is_file() {
        return Err(ApiError::new(
            axum::http::StatusCode::NOT_FOUND,
            "image_missing",
            format!("{}: image not found", path.display()),
        ));
    }
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| ApiError::internal("image_decode", format!("{}: {e}", path.display())))
}

fn png_response(bytes: Vec<u8>, version: u64) -> Response {
    (
        [(header::CONTENT_TYPE, "image/png".to_string()), (header::ETAG, format!("\"v{version}\""))],
        bytes,
    )
        .into_response()
}

pub async fn frame_image(
    State(state): State<AppState>,
    Path((scene, frame)): Path<(String, String)>,
) -> ApiResult<Response> {
    let sess = session(&state, &scene)?;
    let fid = frame_id(&frame)?;
    let (path, version) = {
        let st = sess.read();
        let f = st.scene.frame(fid).ok_or_else(|| unknown_frame(fid))?;
        (f.rgb_path.clone(), st.version)
    };
    let bytes = blocking(move || {
        let photo = load_photo(&path)?;
        encode_png(&photo).map_err(|e| ApiError::internal("image_encode", e.to_string()))
    })
    .await?;
    Ok(png_response(bytes, version))
}

#[derive(Deserialize)]
pub struct OverlayQuery {
    mode: Option<String>,
    alpha: Option<String>,
}

pub async fn render_overlay(
    State(state): State<AppState>,
    Path((scene, frame, object)): Path<(String, String, String)>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let sess = session(&state, &scene)?;
    let fid = frame_id(&frame)?;
    let oid = object_id(&object)?;
    let mode: OverlayMode = match q.mode.as_deref() {
        None => OverlayMode::Silhouette,
        Some(m) => m.parse().map_err(ApiError::unprocessable)?,
    };
    let alpha = match q.alpha.as_deref() {
        None => 0.5,
        Some(a) => a
            .parse::<f64>()
            .ok()
            .filter(|a| (0.0..=1.0).contains(a))
            .ok_or_else(|| ApiError::unprocessable(format!("alpha must be a number in [0, 1], got {a:?}")))?,
    };
    // Copy everything out under one read lock so the render sees one consistent edit.
    let (cam, rgb, mesh, pose, k, version) = {
        let st = sess.read();
        let f = st.scene.frame(fid).ok_or_else(|| unknown_frame(fid))?;
        let o = st.scene.object(oid).ok_or_else(|| unknown_object(oid))?;
        (f.camera_to_world, f.rgb_path.clone(), Arc::clone(&o.mesh), o.pose_world, st.scene.intrinsics, st.version)
    };
    let bytes = blocking(move || {
        let mut photo = load_photo(&rgb)?;
        if alpha > 0.0 {
            let mask = render_silhouette(&mesh, &pose, &cam, &k);
            composite(&mut photo, &overlay_mask(&mask, mode), alpha);
        }
        encode_png(&photo).map_err(|e| ApiError::internal("image_encode", e.to_string()))
    })
    .await?;
    Ok(png_response(bytes, version))
}

fn check_version(expected: Option<u64>, current: u64) -> ApiResult<()> {
    match expected {
        Some(v) if v != current => Err(ApiError::conflict(format!(
            "expected version {v}, scene is at version {current}"
        ))),
        _ => Ok(()),
    }
}

fn refuse_if_busy(sess: &Session) -> ApiResult<()> {
    if sess.is_busy() {
        return Err(ApiError::conflict("a refinement is running on this scene"));
    }
    Ok(())
}

pub async fn update_pose(
    State(state): State<AppState>,
    Path((scene, object)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<PoseResponse>> {
    let sess = session(&state, &scene)?;
    let oid = object_id(&object)?;
    let update: PoseUpdate =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed pose update: {e}")))?;
    refuse_if_busy(&sess)?;
    let mut st = sess.write();
    let current = st.pose(oid).ok_or_else(|| unknown_object(oid))?;
    check_version(update.expected_version(), st.version)?;
    let new_pose = match &update {
        PoseUpdate::Absolute { pose, .. } => {
            if !pose.is_finite() {
                return Err(ApiError::bad_request("pose must be finite"));
            }
            *pose
        }
        PoseUpdate::Delta {
            space,
            motion,
            axis,
            magnitude,
            ..
        } => {
            let cam = match space {
                DeltaSpace::World => None,
                DeltaSpace::Camera(f) | DeltaSpace::CameraRay(f) => {
                    Some(st.scene.frame(*f).ok_or_else(|| unknown_frame(*f))?.camera_to_world)
                }
            };
            apply_delta(&current, *space, *motion, axis, *magnitude, cam.as_ref()).map_err(ApiError::bad_request)?
        }
    };
    let version = st.apply(oid, new_pose).ok_or_else(|| unknown_object(oid))?;
    Ok(Json(PoseResponse {
        object_id: oid,
        pose: new_pose,
        version,
    }))
}

async fn undo_redo(state: AppState, scene: String, redo: bool) -> ApiResult<Json<PoseResponse>> {
    let sess = session(&state, &scene)?;
    refuse_if_busy(&sess)?;
    let mut st = sess.write();
    let edit = if redo { st.redo() } else { st.undo() };
    let edit = edit.ok_or_else(|| ApiError::conflict(if redo { "nothing to redo" } else { "nothing to undo" }))?;
    Ok(Json(PoseResponse {
        object_id: edit.object_id,
        pose: if redo { edit.after } else { edit.before },
        version: st.version,
    }))
}

pub async fn undo(State(state): State<AppState>, Path(scene): Path<String>) -> ApiResult<Json<PoseResponse>> {
    undo_redo(state, scene, false).await
}

pub async fn redo(State(state): State<AppState>, Path(scene): Path<String>) -> ApiResult<Json<PoseResponse>> {
    undo_redo(state, scene, true).await
}

#[derive(Serialize)]
pub struct RefineResponse {
    object_id: u16,
    pose: RigidTransform,
    version: u64,
    frames: Vec<u32>,
    initial_score: Option<f64>,
    final_score: Option<f64>,
    trace: RefineTrace,
}

fn refine_error(e: RefineError) -> ApiError {
    match e {
        RefineError::NoFrames => ApiError::conflict("no reference masks"),
        other => ApiError::unprocessable(other.to_string()),
    }
}

/// Multipart form: `mask_<frame_id>` PNG parts (nonzero pixels are the
/// object), plus an optional `config` part holding a refine config as JSON.
pub async fn run_refine(
    State(state): State<AppState>,
    Path((scene, object)): Path<(String, String)>,
    mut form: Multipart,
) -> ApiResult<Json<RefineResponse>> {
    let sess = session(&state, &scene)?;
    let oid = object_id(&object)?;
    let mut masks: Vec<(u32, BinaryMask)> = Vec::new();
    let mut cfg = RefineConfig::default();
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("reading part {name:?}: {e}")))?;
        if name == "config" {
            let text = std::str::from_utf8(&data).map_err(|_| ApiError::bad_request("config must be UTF-8 JSON"))?;
            cfg = RefineConfig::from_json(text).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        } else if let Some(id) = name.strip_prefix("mask_") {
            let fid: u32 = id
                .parse()
                .map_err(|_| ApiError::bad_request(format!("bad mask part name {name:?}")))?;
            let mask = BinaryMask::from_image_bytes(&data)
                .map_err(|e| ApiError::bad_request(format!("{name}: {e}")))?;
            masks.retain(|(f, _)| *f != fid);
            masks.push((fid, mask));
        } else {
            return Err(ApiError::bad_request(format!("unexpected part {name:?}")));
        }
    }
    if cfg.max_iterations > MAX_REFINE_ITERATIONS {
        return Err(ApiError::unprocessable(format!(
            "max_iterations must be at most {MAX_REFINE_ITERATIONS}"
        )));
    }
    if masks.is_empty() {
        return Err(ApiError::conflict("no reference masks uploaded"));
    }
    let guard = sess
        .try_begin()
        .ok_or_else(|| ApiError::conflict("a refinement is already running on this scene"))?;
    let (views, frames, mesh, start, k, version) = {
        let st = sess.read();
        let o = st.scene.object(oid).ok_or_else(|| unknown_object(oid))?;
        // Reference views follow scene frame order.
        let mut ordered = Vec::new();
        for (fid, _) in &masks {
            if st.scene.frame(*fid).is_none() {
                return Err(unknown_frame(*fid));
            }
        }
        for f in &st.scene.frames {
            if let Some((_, m)) = masks.iter().find(|(id, _)| *id == f.frame_id) {
                ordered.push((
                    f.frame_id,
                    ReferenceView {
                        cam_to_world: f.camera_to_world,
                        reference: m.clone(),
                    },
                ));
            }
        }
        let (frames, views): (Vec<u32>, Vec<ReferenceView>) = ordered.into_iter().unzip();
        (views, frames, Arc::clone(&o.mesh), o.pose_world, st.scene.intrinsics, st.version)
    };
    let (pose, trace) = blocking(move || refine(&start, &mesh, &views, &k, &cfg).map_err(refine_error)).await?;
    let mut st = sess.write();
    check_version(Some(version), st.version)?;
    let version = if pose != start {
        st.apply(oid, pose).ok_or_else(|| unknown_object(oid))?
    } else {
        st.version
    };
    drop(st);
    drop(guard);
    Ok(Json(RefineResponse {
        object_id: oid,
        pose,
        version,
        frames,
        initial_score: trace.iterations.first().map(|e| e.score_before),
        final_score: trace.iterations.last().map(|e| e.score_after),
        trace,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRequest {
    /// Relative paths resolve against the scene's config directory.
    out_dir: PathBuf,
    #[serde(default)]
    options: ExportOptions,
}

pub async fn export(
    State(state): State<AppState>,
    Path(scene_id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let sess = session(&state, &scene_id)?;
    let req: ExportRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed export request: {e}")))?;
    let scene: Scene = sess.read().scene.clone();
    let out_dir = if req.out_dir.is_absolute() {
        req.out_dir
    } else {
        scene.config_dir.join(req.out_dir)
    };
    let (manifest, out_dir) = blocking(move || {
        export_scene(&scene, &out_dir, &req.options)
            .map(|m| (m, out_dir))
            .map_err(|e| ApiError::internal("export_failed", e.to_string()))
    })
    .await?;
    let frames: Vec<Value> = manifest
        .frames
        .iter()
        .map(|f| {
            json!({
                "frame_id": f.frame_id,
                "objects": f.objects.iter().filter(|o| o.visible_px > 0).count(),
                "visible_px": f.objects.iter().map(|o| o.visible_px).sum::<u64>(),
            })
        })
        .collect();
    Ok(Json(json!({
        "manifest": out_dir.join(labelkit_core::export::MANIFEST_FILE).display().to_string(),
        "scene_meta": out_dir.join(labelkit_core::export::META_FILE).display().to_string(),
        "frames": frames,
        "missing_rgb": manifest.frames_missing_rgb(),
    })))
}

pub async fn save(State(state): State<AppState>, Path(scene): Path<String>) -> ApiResult<Json<Value>> {
    let sess = session(&state, &scene)?;
    let path = sess
        .config_path
        .clone()
        .ok_or_else(|| ApiError::conflict("scene has no config file to save to"))?;
    let mut st = sess.write();
    st.scene
        .save(&path)
        .map_err(|e| ApiError::internal("save_failed", e.to_string()))?;
    st.dirty = false;
    Ok(Json(json!({ "path": path.display().to_string(), "version": st.version })))
}
