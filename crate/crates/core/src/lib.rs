pub mod export;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod raster;
pub mod refine;
pub mod tsdf;
