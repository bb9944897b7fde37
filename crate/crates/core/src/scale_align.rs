//! Relative-to-metric scale estimation.
//!
//! Every SfM observation yields a factor `d_metric / d_sfm`, where `d_sfm` is the
//! point's depth in the observing camera and `d_metric` is the predicted metric depth
//! sampled at the observed pixel. Each frame keeps the median of its factors and the
//! clip factor is the median over frames. Clips whose extreme frame factors sit in the
//! outer quantiles of a dataset are rejected.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_scale, CameraIntrinsics, Pose, PoseConvention, ScaleSpace, Trajectory};
use crate::raster::{is_valid_depth, DepthRaster};

/// Depths at or below this are treated as degenerate.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Metric samples deeper than this (meters) are discarded by default.
pub const DEFAULT_MAX_DEPTH: f64 = 20.0;

pub const DEFAULT_QUANTILE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub u: f64,
    pub v: f64,
}

/// A triangulated point with the pixels it was observed at.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub id: u64,
    pub xyz: Vector3<f64>,
    pub track: Vec<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub max_depth: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAlignment {
    pub clip_id: String,
    pub per_frame_factors: BTreeMap<usize, Vec<f64>>,
    pub frame_medians: BTreeMap<usize, f64>,
    pub clip_alpha: f64,
    pub max_frame_factor: f64,
    pub min_frame_factor: f64,
    pub accepted: bool,
    pub rejection_reason: Option<String>,
}

/// JSON summary of one clip's alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub clip_id: String,
    pub clip_alpha: f64,
    pub frame_medians: BTreeMap<usize, f64>,
    pub max_frame_factor: f64,
    pub min_frame_factor: f64,
    pub accepted: bool,
    pub rejection_reason: Option<String>,
}

impl From<&ScaleAlignment> for AlignmentRecord {
    fn from(a: &ScaleAlignment) -> Self {
        Self {
            clip_id: a.clip_id.clone(),
            clip_alpha: a.clip_alpha,
            frame_medians: a.frame_medians.clone(),
            max_frame_factor: a.max_frame_factor,
            min_frame_factor: a.min_frame_factor,
            accepted: a.accepted,
            rejection_reason: a.rejection_reason.clone(),
        }
    }
}

/// z-component of the point in the camera frame. Not filtered.
pub fn point_depth_in_frame(p: &SparsePoint, pose_w2c: &Pose) -> f64 {
    pose_w2c.transform_point(&p.xyz).z
}

/// `d_metric / d_sfm`, or `None` when either depth is non-finite or not above epsilon.
pub fn per_point_factor(d_metric: f64, d_sfm: f64) -> Option<f64> {
    let ok = |d: f64| d.is_finite() && d > DEPTH_EPSILON;
    (ok(d_metric) && ok(d_sfm)).then(|| d_metric / d_sfm)
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoObservations);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Frame-level factor: the median of a frame's per-point factors.
pub fn frame_factor(factors: &[f64]) -> Result<f64> {
    median(factors)
}

/// Samples depth at a sub-pixel location.
///
/// Interior locations interpolate bilinearly between the four surrounding pixels.
/// Within one pixel of the border, or when a neighbor is invalid, the nearest valid
/// neighbor is used instead. Returns `None` outside the raster or with no valid neighbor.
pub fn sample_depth(raster: &DepthRaster, u: f64, v: f64) -> Option<f64> {
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    if !u.is_finite() || !v.is_finite() || u < -0.5 || v < -0.5 || u > w - 0.5 || v > h - 0.5 {
        return None;
    }
    let x0 = u.floor().clamp(0.0, w - 1.0);
    let y0 = v.floor().clamp(0.0, h - 1.0);
    let x1 = (x0 + 1.0).min(w - 1.0);
    let y1 = (y0 + 1.0).min(h - 1.0);
    let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    let values = corners.map(|(x, y)| raster.valid_at(x as usize, y as usize));

    let interior = u >= 1.0 && v >= 1.0 && u <= w - 2.0 && v <= h - 2.0;
    if interior && values.iter().all(Option::is_some) {
        let (fx, fy) = (u - x0, v - y0);
        let [a, b, c, d] = values.map(Option::unwrap);
        return Some(a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + c * (1.0 - fx) * fy + d * fx * fy);
    }
    corners
        .iter()
        .zip(values)
        .filter_map(|((x, y), d)| d.map(|d| ((x - u).powi(2) + (y - v).powi(2), d)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, d)| d)
}

/// Estimates the clip's relative-to-metric scale from sparse points and metric depth rasters.
///
/// `traj_w2c.poses[f]` is the world-to-camera pose of frame `f`.
pub fn align_clip(
    clip_id: &str,
    points: &[SparsePoint],
    depths: &BTreeMap<usize, DepthRaster>,
    k: &CameraIntrinsics,
    traj_w2c: &Trajectory,
    cfg: &AlignConfig,
) -> Result<ScaleAlignment> {
    if traj_w2c.convention != PoseConvention::WorldToCamera {
        return Err(Error::InvalidInput("alignment expects world_to_camera poses".into()));
    }
    for (f, d) in depths {
        if d.width() != k.width || d.height() != k.height {
            return Err(Error::Shape(format!(
                "depth raster of frame {f} is {}x{}, intrinsics are {}x{}",
                d.width(),
                d.height(),
                k.width,
                k.height
            )));
        }
    }
    let mut per_frame: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in points {
        for obs in &p.track {
            let pose = traj_w2c.poses.get(obs.frame).ok_or_else(|| {
                Error::InvalidInput(format!("point {} observed in frame {} without a pose", p.id, obs.frame))
            })?;
            let raster = depths
                .get(&obs.frame)
                .ok_or_else(|| Error::InvalidInput(format!("no depth raster for frame {}", obs.frame)))?;
            let d_sfm = point_depth_in_frame(p, pose);
            let Some(d_metric) = sample_depth(raster, obs.u, obs.v) else {
                continue;
            };
            if !is_valid_depth(d_metric) || d_metric > cfg.max_depth {
                continue;
            }
            if let Some(f) = per_point_factor(d_metric, d_sfm) {
                per_frame.entry(obs.frame).or_default().push(f);
            }
        }
    }
    let frame_medians: BTreeMap<usize, f64> = per_frame
        .iter()
        .map(|(f, v)| Ok((*f, frame_factor(v)?)))
        .collect::<Result<_>>()?;
    if frame_medians.is_empty() {
        return Err(Error::AlignmentFailed(format!(
            "clip {clip_id} has no frame with a valid observation"
        )));
    }
    let medians: Vec<f64> = frame_medians.values().copied().collect();
    Ok(ScaleAlignment {
        clip_id: clip_id.to_string(),
        per_frame_factors: per_frame,
        clip_alpha: median(&medians)?,
        max_frame_factor: medians.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_frame_factor: medians.iter().copied().fold(f64::INFINITY, f64::min),
        frame_medians,
        accepted: true,
        rejection_reason: None,
    })
}

/// Indices whose value falls strictly outside the `[⌊qN⌋, N−1−⌊qN⌋]` order statistics.
/// Ties with a cutoff value are kept, so each side rejects at most `⌊qN⌋` entries.
fn quantile_outliers(values: &[f64], q: f64) -> (Vec<usize>, Vec<usize>) {
    let n = values.len();
    let cut = (q * n as f64).floor() as usize;
    if cut == 0 || n == 0 {
        return (vec![], vec![]);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[cut], sorted[n - 1 - cut]);
    let low = (0..n).filter(|&i| values[i] < lo).collect();
    let high = (0..n).filter(|&i| values[i] > hi).collect();
    (low, high)
}

/// Rejects clips whose max or min frame factor lies in the lowest or highest `q` fraction.
/// The two passes run independently on the full set; a clip rejected by either is rejected.
pub fn filter_clips(mut alignments: Vec<ScaleAlignment>, q: f64) -> Result<Vec<ScaleAlignment>> {
    if !(0.0..0.5).contains(&q) {
        return Err(Error::InvalidInput(format!("quantile {q} outside [0, 0.5)")));
    }
    let maxes: Vec<f64> = alignments.iter().map(|a| a.max_frame_factor).collect();
    let mins: Vec<f64> = alignments.iter().map(|a| a.min_frame_factor).collect();
    let mut reasons: Vec<Vec<&str>> = vec![vec![]; alignments.len()];
    let (lo, hi) = quantile_outliers(&maxes, q);
    lo.iter()
        .for_each(|&i| reasons[i].push("max frame factor in lower quantile"));
    hi.iter()
        .for_each(|&i| reasons[i].push("max frame factor in upper quantile"));
    let (lo, hi) = quantile_outliers(&mins, q);
    lo.iter()
        .for_each(|&i| reasons[i].push("min frame factor in lower quantile"));
    hi.iter()
        .for_each(|&i| reasons[i].push("min frame factor in upper quantile"));
    for (a, r) in alignments.iter_mut().zip(reasons) {
        a.accepted = r.is_empty();
        a.rejection_reason = (!r.is_empty()).then(|| r.join("; "));
    }
    Ok(alignments)
}

/// Applies the clip factor to a canonical camera-to-world trajectory.
pub fn to_metric(traj: &Trajectory, a: &ScaleAlignment) -> Result<Trajectory> {
    if !a.accepted {
        return Err(Error::RejectedAlignment);
    }
    if traj.convention != PoseConvention::CameraToWorld || !traj.is_canonical() {
        return Err(Error::InvalidInput(
            "metric conversion expects a canonical camera_to_world trajectory".into(),
        ));
    }
    if traj.scale_space != ScaleSpace::Relative {
        return Err(Error::InvalidInput("trajectory is already metric".into()));
    }
    apply_scale(traj, a.clip_alpha)
}
