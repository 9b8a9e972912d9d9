//! Scene loading, external trajectories, reconstruction scale and tabletop alignment.

mod plane;
mod scale;
mod scene;
mod trajectory;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::GeometryError;

pub use plane::{fit_plane_ransac, xy_alignment_transform, PlaneModel};
pub use scale::{
    apply_scale, median, solve_scale_from_depth, solve_scale_from_points, DepthLookup, RawDepthImage,
    MIN_SCALE_SAMPLES,
};
pub use scene::{
    FrameConfig, FrameRecord, ObjectConfig, ObjectLabel, Scene, SceneConfig, TrajectoryFormat, TrajectoryRef,
};
pub use trajectory::{
    parse_colmap_images, parse_colmap_points3d, parse_tum_trajectory, serialize_tum, ColmapImage, TimedPose,
    TRAJECTORY_QUATERNION_TOLERANCE,
};

/// A reconstructed 3D point and the pixels it was observed at.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTrack {
    /// Reconstruction units until a scale is applied.
    pub point_world: Vector3<f64>,
    /// `(frame_id, u, v)` in pixel coordinates with the origin at the image corner.
    pub observations: Vec<(u32, f64, f64)>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("insufficient data: {found} valid depth/track pairs, need at least {required}")]
    InsufficientData { found: usize, required: usize },
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("all plane samples were collinear after {0} attempts")]
    Collinear(usize),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("{path}: {message}")]
    Image { path: String, message: String },
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
}
