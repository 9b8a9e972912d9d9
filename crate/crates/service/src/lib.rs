//! HTTP/JSON annotation service: scene queries, overlay rendering, pose
//! editing with undo, silhouette refinement and dataset export.
//!
//! Every error body has the shape `{"error": {"code": "...", "message": "..."}}`.

mod api;
pub mod overlay;
pub mod pose;
pub mod session;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::DefaultBodyLimit;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use thiserror::Error;

use labelkit_core::ingest::Scene;

pub use overlay::OverlayMode;
pub use pose::{AxisSpec, DeltaSpace, Motion, PoseUpdate};
pub use session::{PoseEdit, Session, SessionState, UNDO_DEPTH};

/// File name a scene directory must contain to be picked up by [`AppState::load_root`].
pub const SCENE_FILE: &str = "scene.json";
/// Upper bound on `max_iterations` accepted by the refine endpoint.
pub const MAX_REFINE_ITERATIONS: usize = 1000;
const BODY_LIMIT: usize = 256 << 20;

#[derive(Debug, Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_parameter", message)
    }

    pub fn internal(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scene {
        path: String,
        #[source]
        source: labelkit_core::ingest::IngestError,
    },
}

/// Shared service state: independent sessions keyed by scene id.
#[derive(Clone, Debug, Default)]
pub struct AppState {
    scenes: Arc<RwLock<BTreeMap<String, Arc<Session>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every `<root>/<id>/scene.json`, keyed by the directory name.
    pub fn load_root(root: &Path) -> Result<Self, LoadError> {
        let state = AppState::new();
        let io = |source| LoadError::Io {
            path: root.display().to_string(),
            source,
        };
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SCENE_FILE).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let path = dir.join(SCENE_FILE);
            let scene = Scene::load(&path).map_err(|source| LoadError::Scene {
                path: path.display().to_string(),
                source,
            })?;
            let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            log::info!("loaded scene {id} ({} frames, {} objects)", scene.frames.len(), scene.objects.len());
            state.insert(Session::new(id, scene, Some(path)));
        }
        Ok(state)
    }

    pub fn insert(&self, session: Session) -> Arc<Session> {
        let s = Arc::new(session);
        self.scenes
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(s.id.clone(), Arc::clone(&s));
        s
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.scenes.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        self.scenes.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/scenes", get(api::list_scenes))
        .route("/api/scenes/{scene}/frames", get(api::list_frames))
        .route("/api/scenes/{scene}/frames/{frame}/image", get(api::frame_image))
        .route("/api/scenes/{scene}/frames/{frame}/overlay/{object}", get(api::render_overlay))
        .route("/api/scenes/{scene}/objects", get(api::list_objects))
        .route("/api/scenes/{scene}/objects/{object}", get(api::get_object))
        .route("/api/scenes/{scene}/objects/{object}/pose", post(api::update_pose))
        .route("/api/scenes/{scene}/objects/{object}/refine", post(api::run_refine))
        .route("/api/scenes/{scene}/undo", post(api::undo))
        .route("/api/scenes/{scene}/redo", post(api::redo))
        .route("/api/scenes/{scene}/export", post(api::export))
        .route("/api/scenes/{scene}/save", post(api::save))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
