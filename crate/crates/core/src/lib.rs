//! Subpixel-level 3D Gaussian splatting for lenticular light field displays.
//!
//! The pipeline renders an interlaced light-field image directly at subpixel
//! granularity instead of rendering every viewpoint at full resolution and
//! interlacing afterwards. Neighboring viewpoints are grouped into clusters
//! that share projected covariance, depth, and color from a representative
//! center view, and the per-tile thread-to-subpixel mapping is reordered by
//! viewpoint index so consecutive work items walk the same splat list.
//!
//! Module map:
//! - [`scene`]: Gaussian scenes, PLY ingest, synthetic scene generation.
//! - [`display`]: lenticular model, viewpoint index matrix, remap table,
//!   interlacing.
//! - [`camera`]: viewpoint rigs, view clustering, projection operators.
//! - [`raster`]: the clustered subpixel rasterization pipeline.
//! - [`oracle`]: full-frame reference renderer and image quality metrics.
//! - [`coalesce`]: simulated warp-level memory access analysis of the blend
//!   stage.

pub mod camera;
pub mod coalesce;
pub mod display;
pub mod image_io;
pub mod oracle;
pub mod raster;
pub mod scene;

pub use camera::{Camera, Clustering, Conic2D, Rig, RigSpec};
pub use coalesce::{CoalesceReport, MappingKind, WarpModel};
pub use display::{DisplayConfig, InterlacedImage, RemapTable, TileGrid, ViewpointMatrix};
pub use image_io::ImageBuffer;
pub use oracle::ImageMetricsReport;
pub use raster::{
    BlendOrder, GaussianRangeTable, ProjectionBuffers, RenderOptions, StageTimings,
};
pub use scene::{Gaussian3D, GaussianScene, SceneLayout, SyntheticSceneSpec};

/// Schema tag embedded in every JSON artifact this crate emits.
pub const SCHEMA_VERSION: u32 = 1;
