//! Offline handwriting stroke-order recovery: the geometric and evaluation
//! half of the pipeline.
//!
//! * [`trajectory`]: pen trajectories, arc-length resampling, normalization
//! * [`raster`]: rasterization, thinning, skeleton graphs, snapping
//! * [`data`]: synthetic glyphs, dataset files, image/target pairs
//! * [`eval`]: SP/JP/CT scoring and the graph-trace baseline

pub mod data;
pub mod eval;
pub mod raster;
pub mod trajectory;

pub use raster::{RasterError, RasterImage, SkeletonGraph};
pub use trajectory::{PenTrajectory, Point, ResampleSpec, TrajectoryError};
