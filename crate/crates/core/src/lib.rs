//! Camera-control toolkit for depth-anchored image-to-video generation.
//!
//! - [`geometry`]: rigid transforms, trajectories, depth unprojection, keyframe interpolation.
//! - [`scale_align`]: relative-to-metric scale factors from sparse SfM points and metric depth.
//! - [`renderer`]: z-buffered splat previews and edge-filtered shaping masks.
//! - [`diffusion`]: noise schedule, deterministic sampler and scene-constrained noise shaping.
//! - [`metrics`]: RotErr, TransErr and CamMC with scene-scale normalization.
//! - [`io`]: pose files, COLMAP text exports, PFM/PNG/PBM rasters and JSON records.

pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod renderer;
pub mod scale_align;
pub mod synthetic;

pub use error::{Error, Result};
