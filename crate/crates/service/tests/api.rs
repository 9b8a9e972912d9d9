use std::path::Path;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use nalgebra::{UnitQuaternion, Vector3};
use serde_json::{json, Value};
use tower::ServiceExt;

use labelkit_core::geometry::{shapes, CameraIntrinsics, RigidTransform};
use labelkit_core::raster::{mask_boundary, render_silhouette, BinaryMask};
use labelkit_service::{router, AppState, SCENE_FILE};

const W: u32 = 160;
const H: u32 = 120;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::centered(150.0, W, H).unwrap()
}

fn cameras() -> Vec<RigidTransform> {
    [[0.6, 0.0, 0.25], [0.0, 0.6, 0.25], [-0.45, -0.4, 0.3]]
        .iter()
        .map(|e| RigidTransform::look_at(Vector3::from(*e), Vector3::zeros(), Vector3::z()).unwrap())
        .collect()
}

fn initial_pose() -> RigidTransform {
    RigidTransform::new(UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4), Vector3::new(0.01, -0.02, 0.03))
}

fn mesh() -> labelkit_core::geometry::TriangleMesh {
    shapes::cuboid(Vector3::zeros(), Vector3::new(0.12, 0.08, 0.06))
}

/// Writes `<root>/demo/scene.json` with three frames (the last without a
/// photograph) and one cuboid object.
fn write_scene(root: &Path) -> std::path::PathBuf {
    let dir = root.join("demo");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("box.obj"), mesh().to_obj()).unwrap();
    for i in 0..2 {
        let img = image::RgbImage::from_fn(W, H, |x, y| image::Rgb([(x % 200) as u8, (y % 200) as u8, 90 + i * 10]));
        img.save(dir.join(format!("rgb_{i}.png"))).unwrap();
    }
    let frames: Vec<Value> = cameras()
        .iter()
        .enumerate()
        .map(|(i, c)| json!({ "id": i * 10, "rgb": format!("rgb_{i}.png"), "timestamp": i as f64 * 0.5, "pose": c }))
        .collect();
    let cfg = json!({
        "intrinsics": intrinsics(),
        "frames": frames,
        "objects": [{ "id": 7, "name": "box", "mesh": "box.obj", "pose": initial_pose() }],
    });
    std::fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    dir
}

fn app(root: &Path) -> Router {
    write_scene(root);
    router(AppState::load_root(root).unwrap())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Bytes) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Bytes) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn json_of(b: &Bytes) -> Value {
    serde_json::from_slice(b).unwrap()
}

fn pose_of(v: &Value) -> RigidTransform {
    serde_json::from_value(v.clone()).unwrap()
}

async fn current_pose(app: &Router) -> (RigidTransform, u64) {
    let (s, b) = get(app, "/api/scenes/demo/objects/7").await;
    assert_eq!(s, StatusCode::OK);
    let v = json_of(&b);
    (pose_of(&v["pose"]), v["version"].as_u64().unwrap())
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode) {
    assert_eq!(status, expected, "body: {body}");
    assert!(body["error"]["code"].is_string(), "body: {body}");
    assert!(body["error"]["message"].is_string(), "body: {body}");
}

fn multipart(parts: &[(String, Vec<u8>)]) -> (String, Vec<u8>) {
    let boundary = "XBOUNDARYx7d1";
    let mut body = Vec::new();
    for (name, data) in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n").as_bytes(),
        );
        body.extend_from_slice(b"Content-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

async fn post_multipart(app: &Router, uri: &str, parts: &[(String, Vec<u8>)]) -> (StatusCode, Value) {
    let (ct, body) = multipart(parts);
    let req = Request::post(uri).header("content-type", ct).body(Body::from(body)).unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn reference_parts(pose: &RigidTransform) -> Vec<(String, Vec<u8>)> {
    let (m, k) = (mesh(), intrinsics());
    cameras()
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("mask_{}", i * 10), render_silhouette(&m, pose, c, &k).to_png_8bit().unwrap()))
        .collect()
}

#[tokio::test]
async fn empty_service_lists_no_scenes() {
    let app = router(AppState::new());
    let (s, b) = get(&app, "/api/scenes").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(json_of(&b), json!([]));
}

#[tokio::test]
async fn scene_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (_, b) = get(&app, "/api/scenes").await;
    assert_eq!(json_of(&b), json!(["demo"]));

    let (s, b) = get(&app, "/api/scenes/demo/frames").await;
    assert_eq!(s, StatusCode::OK);
    let frames = json_of(&b);
    let ids: Vec<u64> = frames.as_array().unwrap().iter().map(|f| f["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![0, 10, 20]);
    assert_eq!(frames[1]["timestamp"], json!(0.5));
    assert_eq!(pose_of(&frames[2]["pose"]), cameras()[2]);

    let (s, b) = get(&app, "/api/scenes/demo/objects").await;
    assert_eq!(s, StatusCode::OK);
    let objs = json_of(&b);
    assert_eq!(objs["version"], json!(0));
    assert_eq!(objs["objects"][0]["id"], json!(7));
    assert_eq!(pose_of(&objs["objects"][0]["pose"]), initial_pose());

    for uri in ["/api/scenes/nope/frames", "/api/scenes/nope/objects", "/api/scenes/demo/objects/8", "/api/nothing"] {
        let (s, b) = get(&app, uri).await;
        assert_error(s, &json_of(&b), StatusCode::NOT_FOUND);
    }
}

#[tokio::test]
async fn overlay_rendering() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let photo_path = tmp.path().join("demo/rgb_1.png");
    let photo = image::open(&photo_path).unwrap().to_rgb8();

    // alpha 0 reproduces the photograph re-encoded.
    let (s, b) = get(&app, "/api/scenes/demo/frames/10/overlay/7?mode=silhouette&alpha=0").await;
    assert_eq!(s, StatusCode::OK);
    let mut expected = std::io::Cursor::new(Vec::new());
    photo.write_to(&mut expected, image::ImageFormat::Png).unwrap();
    assert_eq!(b.as_ref(), expected.get_ref().as_slice());
    let (_, plain) = get(&app, "/api/scenes/demo/frames/10/image").await;
    assert_eq!(plain, b);

    // Full-opacity boundary paints exactly the boundary of the rendered silhouette.
    let (s, b) = get(&app, "/api/scenes/demo/frames/10/overlay/7?mode=boundary&alpha=1").await;
    assert_eq!(s, StatusCode::OK);
    let out = image::load_from_memory(&b).unwrap().to_rgb8();
    assert_eq!(out.dimensions(), photo.dimensions());
    let sil = render_silhouette(&mesh(), &initial_pose(), &cameras()[1], &intrinsics());
    let boundary = mask_boundary(&sil, 2);
    assert!(boundary.count() > 0);
    let painted = BinaryMask::from_fn(W, H, |x, y| out.get_pixel(x, y) != photo.get_pixel(x, y));
    assert_eq!(painted.count(), boundary.count());
    assert!(painted.difference(&boundary).unwrap().is_empty());

    let (_, b) = get(&app, "/api/scenes/demo/frames/10/overlay/7?alpha=1").await;
    let out = image::load_from_memory(&b).unwrap().to_rgb8();
    let painted = BinaryMask::from_fn(W, H, |x, y| out.get_pixel(x, y).0 == [0, 255, 0]);
    assert_eq!(painted, sil);

    for (uri, code) in [
        ("/api/scenes/demo/frames/10/overlay/8", StatusCode::NOT_FOUND),
        ("/api/scenes/demo/frames/11/overlay/7", StatusCode::NOT_FOUND),
        ("/api/scenes/demo/frames/10/overlay/7?alpha=1.5", StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/scenes/demo/frames/10/overlay/7?alpha=-0.1", StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/scenes/demo/frames/10/overlay/7?alpha=NaN", StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/scenes/demo/frames/10/overlay/7?mode=textured", StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/scenes/demo/frames/20/overlay/7", StatusCode::NOT_FOUND),
    ] {
        let (s, b) = get(&app, uri).await;
        assert_error(s, &json_of(&b), code);
    }
    // Rendering never moves the version.
    assert_eq!(current_pose(&app).await, (initial_pose(), 0));
}

#[tokio::test]
async fn absolute_and_delta_pose_updates() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let target = RigidTransform::new(UnitQuaternion::from_euler_angles(-0.3, 0.5, 1.1), Vector3::new(0.1, 0.2, -0.05));
    let (s, v) = post_json(&app, "/api/scenes/demo/objects/7/pose", &json!({"mode": "absolute", "pose": target})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["version"], json!(1));
    assert_eq!(current_pose(&app).await, (target, 1));

    // 1 cm along frame 10's camera x: the object origin moves by the camera's
    // first rotation column and its orientation is untouched.
    let (s, v) = post_json(
        &app,
        "/api/scenes/demo/objects/7/pose",
        &json!({"mode": "delta", "space": {"camera": 10}, "motion": "translate", "axis": "+x", "magnitude": 0.01, "expected_version": 1}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let got = pose_of(&v["pose"]);
    let cam_x = cameras()[1].rotation_matrix().column(0).into_owned();
    assert!((got.translation() - (target.translation() + cam_x * 0.01)).norm() < 1e-12);
    assert!(got.rotation().angle_to(target.rotation()) < 1e-12);
    assert_eq!(current_pose(&app).await.0, got);

    // Rotation about the camera's viewing axis keeps the object origin.
    let (s, v) = post_json(
        &app,
        "/api/scenes/demo/objects/7/pose",
        &json!({"mode": "delta", "space": {"camera": 0}, "motion": "rotate", "axis": "z", "magnitude": 0.1}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let rotated = pose_of(&v["pose"]);
    assert!((rotated.translation() - got.translation()).norm() < 1e-12);
    let cam_z = cameras()[0].rotation_matrix().column(2).into_owned();
    let expected = UnitQuaternion::from_scaled_axis(cam_z * 0.1) * got.rotation();
    assert!(rotated.rotation().angle_to(&expected) < 1e-12);

    for body in [
        json!({"mode": "absolute"}),
        json!({"mode": "delta", "space": "world", "motion": "translate", "magnitude": 0.01}),
        json!({"mode": "teleport"}),
        json!({"mode": "delta", "space": "world", "motion": "translate", "axis": "q", "magnitude": 0.01}),
    ] {
        let (s, v) = post_json(&app, "/api/scenes/demo/objects/7/pose", &body).await;
        assert_error(s, &v, StatusCode::BAD_REQUEST);
    }
    let req = Request::post("/api/scenes/demo/objects/7/pose").body(Body::from("{not json")).unwrap();
    let (s, b) = send(&app, req).await;
    assert_error(s, &json_of(&b), StatusCode::BAD_REQUEST);

    let (s, v) = post_json(
        &app,
        "/api/scenes/demo/objects/7/pose",
        &json!({"mode": "absolute", "pose": target, "expected_version": 1}),
    )
    .await;
    assert_error(s, &v, StatusCode::CONFLICT);
    let (s, v) = post_json(
        &app,
        "/api/scenes/demo/objects/7/pose",
        &json!({"mode": "delta", "space": {"camera": 99}, "motion": "translate", "axis": "x", "magnitude": 0.01}),
    )
    .await;
    assert_error(s, &v, StatusCode::NOT_FOUND);
    assert_eq!(current_pose(&app).await.1, 3);
}

#[tokio::test]
async fn camera_ray_drag_keeps_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (s, v) = post_json(
        &app,
        "/api/scenes/demo/objects/7/pose",
        &json!({"mode": "delta", "space": {"camera_ray": 0}, "motion": "translate", "axis": "+y", "magnitude": 0.02}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let c = *cameras()[0].translation();
    let d0 = (initial_pose().translation() - c).norm();
    let d1 = (pose_of(&v["pose"]).translation() - c).norm();
    assert!((d0 - d1).abs() < 1e-12);
}

#[tokio::test]
async fn nudges_undo_and_redo() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (before, v0) = current_pose(&app).await;
    let mut versions = vec![v0];
    for i in 0..10 {
        let axis = ["+x", "-y", "z"][i % 3];
        let (s, v) = post_json(
            &app,
            "/api/scenes/demo/objects/7/pose",
            &json!({"mode": "delta", "space": {"camera": 10}, "motion": if i % 2 == 0 { "translate" } else { "rotate" }, "axis": axis, "magnitude": 0.01}),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        versions.push(v["version"].as_u64().unwrap());
    }
    assert!(versions.windows(2).all(|w| w[1] == w[0] + 1), "{versions:?}");
    let (after, _) = current_pose(&app).await;
    for _ in 0..10 {
        let (s, _) = post_json(&app, "/api/scenes/demo/undo", &json!({})).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_eq!(current_pose(&app).await.0, before);
    let (s, v) = post_json(&app, "/api/scenes/demo/undo", &json!({})).await;
    assert_error(s, &v, StatusCode::CONFLICT);
    for _ in 0..10 {
        let (s, _) = post_json(&app, "/api/scenes/demo/redo", &json!({})).await;
        assert_eq!(s, StatusCode::OK);
    }
    assert_eq!(current_pose(&app).await, (after, 30));
    let (s, v) = post_json(&app, "/api/scenes/demo/redo", &json!({})).await;
    assert_error(s, &v, StatusCode::CONFLICT);
}

#[tokio::test]
async fn refine_at_reference_pose_is_a_fixed_point() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let mut parts = reference_parts(&initial_pose());
    parts.push(("config".into(), br#"{"max_iterations": 12}"#.to_vec()));
    let (s, v) = post_multipart(&app, "/api/scenes/demo/objects/7/refine", &parts).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["frames"], json!([0, 10, 20]));
    assert_eq!(v["final_score"], json!(1.0));
    assert_eq!(pose_of(&v["pose"]), initial_pose());
    assert_eq!(v["version"], json!(0));
    for e in v["trace"]["iterations"].as_array().unwrap() {
        assert_eq!(e["score_after"], json!(1.0));
        assert_eq!(e["motion"]["theta1"], json!(0.0));
        assert_eq!(e["motion"]["theta2"], json!(0.0));
    }
}

#[tokio::test]
async fn refine_reduces_a_one_centimeter_error() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let gt = initial_pose();
    let start = gt.with_translation(gt.translation() + Vector3::new(0.006, -0.006, 0.0053));
    let start_err = (start.translation() - gt.translation()).norm();
    assert!((start_err - 0.01).abs() < 1e-3);
    post_json(&app, "/api/scenes/demo/objects/7/pose", &json!({"mode": "absolute", "pose": start})).await;
    let mut parts = reference_parts(&gt);
    parts.push(("config".into(), br#"{"max_iterations": 60}"#.to_vec()));
    let (s, v) = post_multipart(&app, "/api/scenes/demo/objects/7/refine", &parts).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let scores: Vec<(f64, f64)> = v["trace"]["iterations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["score_before"].as_f64().unwrap(), e["score_after"].as_f64().unwrap()))
        .collect();
    assert!(scores.iter().all(|(b, a)| a >= b));
    let (pose, version) = current_pose(&app).await;
    assert_eq!(pose, pose_of(&v["pose"]));
    assert_eq!(version, 2);
    let end_err = (pose.translation() - gt.translation()).norm();
    assert!(end_err < start_err, "{end_err} vs {start_err}");
    // The refinement is one undoable edit.
    post_json(&app, "/api/scenes/demo/undo", &json!({})).await;
    assert_eq!(current_pose(&app).await.0, start);
}

#[tokio::test]
async fn refine_request_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let uri = "/api/scenes/demo/objects/7/refine";
    let (s, v) = post_multipart(&app, uri, &[]).await;
    assert_error(s, &v, StatusCode::CONFLICT);
    let (s, v) = post_multipart(&app, uri, &[("config".into(), b"{}".to_vec())]).await;
    assert_error(s, &v, StatusCode::CONFLICT);
    let mask = BinaryMask::new(W, H).to_png_8bit().unwrap();
    let (s, v) = post_multipart(&app, uri, &[("mask_5".into(), mask.clone())]).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);
    let (s, v) = post_multipart(&app, "/api/scenes/demo/objects/9/refine", &[("mask_0".into(), mask.clone())]).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);
    let small = BinaryMask::new(W / 2, H).to_png_8bit().unwrap();
    let (s, v) = post_multipart(&app, uri, &[("mask_0".into(), small)]).await;
    assert_error(s, &v, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = post_multipart(&app, uri, &[("mask_0".into(), mask.clone()), ("config".into(), br#"{"n_directions": 1}"#.to_vec())]).await;
    assert_error(s, &v, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, v) = post_multipart(&app, uri, &[("mask_0".into(), b"not a png".to_vec())]).await;
    assert_error(s, &v, StatusCode::BAD_REQUEST);
    let (s, v) = post_multipart(&app, uri, &[("weights".into(), mask)]).await;
    assert_error(s, &v, StatusCode::BAD_REQUEST);
    assert_eq!(current_pose(&app).await, (initial_pose(), 0));
}

#[tokio::test]
async fn export_and_save() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (s, v) = post_json(&app, "/api/scenes/demo/export", &json!({"out_dir": "out_a", "options": {"scene_id": "demo"}})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let manifest = std::path::PathBuf::from(v["manifest"].as_str().unwrap());
    assert!(manifest.is_file());
    assert_eq!(v["frames"].as_array().unwrap().len(), 3);
    assert!(v["frames"][0]["visible_px"].as_u64().unwrap() > 0);
    assert_eq!(v["missing_rgb"], json!([20]));
    let first = std::fs::read(&manifest).unwrap();
    let (s, _) = post_json(&app, "/api/scenes/demo/export", &json!({"out_dir": "out_a", "options": {"scene_id": "demo"}})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(std::fs::read(&manifest).unwrap(), first);

    let blocker = tmp.path().join("blocker");
    std::fs::write(&blocker, b"file").unwrap();
    let bad = blocker.join("out");
    let (s, v) = post_json(&app, "/api/scenes/demo/export", &json!({"out_dir": bad})).await;
    assert_error(s, &v, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["error"]["message"].as_str().unwrap().contains(blocker.to_str().unwrap()), "{v}");
    let (s, v) = post_json(&app, "/api/scenes/demo/export", &json!({"out": "x"})).await;
    assert_error(s, &v, StatusCode::BAD_REQUEST);

    let moved = RigidTransform::from_translation(Vector3::new(0.05, 0.0, 0.0));
    post_json(&app, "/api/scenes/demo/objects/7/pose", &json!({"mode": "absolute", "pose": moved})).await;
    let (_, b) = get(&app, "/api/scenes/demo/objects").await;
    assert_eq!(json_of(&b)["dirty"], json!(true));
    let (s, v) = post_json(&app, "/api/scenes/demo/save", &json!({})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (_, b) = get(&app, "/api/scenes/demo/objects").await;
    assert_eq!(json_of(&b)["dirty"], json!(false));
    let reloaded = router(AppState::load_root(tmp.path()).unwrap());
    assert_eq!(current_pose(&reloaded).await.0, moved);
}
