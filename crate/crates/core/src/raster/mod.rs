//! CPU silhouette, depth and label-map rendering plus mask algebra.

mod mask;
mod render;

use thiserror::Error;

pub use mask::{mask_bbox, mask_boundary, mask_iou, BinaryMask, DepthMap, LabelMap, PixelBox};
pub use render::{
    object_to_camera, rasterize_silhouette_into, render_depth, render_label_map, render_shaded, render_silhouette,
    LabelledObject, Projector, ScreenTriangle, TriangleSetup, NEAR_PLANE,
};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("mask dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("duplicate object id {0}")]
    DuplicateObjectId(u16),
    #[error("object id {0} is reserved for background")]
    ReservedObjectId(u16),
    #[error("object id {0} does not fit in an 8-bit mask")]
    IdOverflow(u16),
    #[error("buffer has {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("image codec: {0}")]
    Image(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
