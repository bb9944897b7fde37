//! Z-buffered square-splat rendering of point clouds, and the edge-filtered
//! masks that select which preview pixels may constrain sampling.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PointCloud, Pose, PoseConvention, Trajectory};
use crate::raster::{ColorRaster, DepthRaster, Mask};

/// Points closer to the camera than this (meters) are dropped.
pub const NEAR_PLANE: f64 = 1e-4;

/// Default splat radius for previews. Round-trip checks use 0.
pub const DEFAULT_RADIUS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

/// Perspective projection of a world point. `None` when the point is behind the near plane.
pub fn project_point(p_world: &Vector3<f64>, pose_w2c: &Pose, k: &CameraIntrinsics) -> Option<Projection> {
    let p = pose_w2c.transform_point(p_world);
    if p.z <= NEAR_PLANE {
        return None;
    }
    Some(Projection {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
        z: p.z,
    })
}

/// Color, depth and visibility of one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub color: ColorRaster,
    /// `+∞` where no point landed.
    pub depth: Vec<f64>,
    pub visibility: Mask,
}

impl RenderedFrame {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            color: ColorRaster::black(width, height),
            depth: vec![f64::INFINITY; width * height],
            visibility: Mask::filled(width, height, false),
        }
    }

    pub fn width(&self) -> usize {
        self.visibility.width()
    }

    pub fn height(&self) -> usize {
        self.visibility.height()
    }

    /// Depth buffer as a raster; empty pixels become 0 (invalid).
    pub fn depth_raster(&self) -> DepthRaster {
        let values = self
            .depth
            .iter()
            .map(|d| if d.is_finite() { *d as f32 } else { 0.0 })
            .collect();
        DepthRaster::new(self.width(), self.height(), values).expect("frame dims are valid")
    }

    /// Builds a frame from stored color and visibility, e.g. preview frames read back from disk.
    /// Depth is unknown and reported as 1 at visible pixels.
    pub fn from_color_and_visibility(color: ColorRaster, visibility: Mask) -> Result<Self> {
        if color.width() != visibility.width() || color.height() != visibility.height() {
            return Err(Error::Shape(format!(
                "color {}x{} vs mask {}x{}",
                color.width(),
                color.height(),
                visibility.width(),
                visibility.height()
            )));
        }
        let depth = visibility
            .bits()
            .iter()
            .map(|b| if *b { 1.0 } else { f64::INFINITY })
            .collect();
        Ok(Self {
            color,
            depth,
            visibility,
        })
    }
}

/// Renders `cloud` from `pose_w2c`. Each point covers the square of Chebyshev radius
/// `radius_px` around its rounded pixel, and wins a pixel only with a strictly smaller depth.
pub fn splat(cloud: &PointCloud, pose_w2c: &Pose, k: &CameraIntrinsics, radius_px: usize) -> RenderedFrame {
    let (w, h) = (k.width, k.height);
    let mut frame = RenderedFrame::empty(w, h);
    let r = radius_px as i64;
    for (i, p) in cloud.positions.iter().enumerate() {
        let Some(proj) = project_point(p, pose_w2c, k) else {
            continue;
        };
        let (pu, pv) = (proj.u.round(), proj.v.round());
        if !pu.is_finite() || !pv.is_finite() {
            continue;
        }
        let (pu, pv) = (pu as i64, pv as i64);
        if pu < 0 || pv < 0 || pu >= w as i64 || pv >= h as i64 {
            continue;
        }
        let rgb = cloud.colors.as_ref().map_or([1.0; 3], |c| c[i]);
        for y in (pv - r).max(0)..=(pv + r).min(h as i64 - 1) {
            for x in (pu - r).max(0)..=(pu + r).min(w as i64 - 1) {
                let idx = y as usize * w + x as usize;
                if proj.z < frame.depth[idx] {
                    frame.depth[idx] = proj.z;
                    frame.color.set(x as usize, y as usize, rgb);
                    frame.visibility.set(x as usize, y as usize, true);
                }
            }
        }
    }
    frame
}

/// Renders one frame per trajectory pose. Camera-to-world poses are inverted before
/// projection. Frames are independent and rendered in parallel.
pub fn render_preview(
    cloud: &PointCloud,
    traj: &Trajectory,
    k: &CameraIntrinsics,
    radius_px: usize,
) -> Vec<RenderedFrame> {
    traj.poses
        .par_iter()
        .map(|p| render_view(cloud, p, traj.convention, k, radius_px))
        .collect()
}

/// Renders a single trajectory pose, independent of all others.
pub fn render_view(
    cloud: &PointCloud,
    pose: &Pose,
    convention: PoseConvention,
    k: &CameraIntrinsics,
    radius_px: usize,
) -> RenderedFrame {
    let w2c = match convention {
        PoseConvention::CameraToWorld => pose.inverse(),
        PoseConvention::WorldToCamera => *pose,
    };
    splat(cloud, &w2c, k, radius_px)
}

/// Visibility mask with unreliable edges removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapingMask {
    pub mask: Mask,
    pub kernel_size: usize,
}

/// How the `k × k` neighborhood treats pixels outside the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderMode {
    /// The neighborhood is clipped to the raster.
    #[default]
    Clamp,
    /// Outside pixels count as invisible, so borders are never selected for `k ≥ 3`.
    Invisible,
}

/// Keeps a visible pixel only if its whole `k × k` neighborhood (clipped to the raster) is visible.
pub fn shaping_mask(frame: &RenderedFrame, kernel: usize) -> Result<ShapingMask> {
    shaping_mask_with(frame, kernel, BorderMode::Clamp)
}

pub fn shaping_mask_with(frame: &RenderedFrame, kernel: usize, border: BorderMode) -> Result<ShapingMask> {
    Ok(ShapingMask {
        mask: erode_visibility(&frame.visibility, kernel, border)?,
        kernel_size: kernel,
    })
}

pub fn erode_visibility(vis: &Mask, kernel: usize, border: BorderMode) -> Result<Mask> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidKernel(kernel));
    }
    let (w, h) = (vis.width(), vis.height());
    let r = (kernel / 2) as i64;
    let mut out = Mask::filled(w, h, false);
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            if !vis.get(u as usize, v as usize) {
                continue;
            }
            let all = (v - r..=v + r).all(|y| {
                (u - r..=u + r).all(|x| {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        border == BorderMode::Clamp
                    } else {
                        vis.get(x as usize, y as usize)
                    }
                })
            });
            out.set(u as usize, v as usize, all);
        }
    }
    Ok(out)
}
