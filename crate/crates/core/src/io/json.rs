//! JSON documents (trajectories, intrinsics, reports) and CSV tables.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::diffusion::SweepRow;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, PoseConvention, ScaleSpace, Trajectory};
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    /// Row-major rotation.
    pub r: [f64; 9],
    pub t: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryJson {
    pub convention: PoseConvention,
    pub scale_space: ScaleSpace,
    pub poses: Vec<PoseJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_indices: Option<Vec<i64>>,
}

impl From<&Pose> for PoseJson {
    fn from(p: &Pose) -> Self {
        let t = p.translation();
        Self {
            r: p.rotation_row_major(),
            t: [t.x, t.y, t.z],
        }
    }
}

impl PoseJson {
    pub fn to_pose(&self) -> Result<Pose> {
        Pose::new(Matrix3::from_row_slice(&self.r), Vector3::from(self.t))
    }
}

impl TrajectoryJson {
    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| p.to_pose().map_err(|e| Error::InvalidPose(format!("pose {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(idx) = &self.frame_indices {
            if idx.len() != poses.len() {
                return Err(Error::Shape(format!(
                    "{} frame indices for {} poses",
                    idx.len(),
                    poses.len()
                )));
            }
        }
        Ok(Trajectory {
            poses,
            convention: self.convention,
            scale_space: self.scale_space,
            frame_indices: self.frame_indices.clone(),
        })
    }
}

pub fn trajectory_json(t: &Trajectory) -> TrajectoryJson {
    TrajectoryJson {
        convention: t.convention,
        scale_space: t.scale_space,
        poses: t.poses.iter().map(PoseJson::from).collect(),
        frame_indices: t.frame_indices.clone(),
    }
}

pub fn parse_trajectory_json(text: &str) -> Result<Trajectory> {
    serde_json::from_str::<TrajectoryJson>(text)?.to_trajectory()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&super::read_bytes(path)?)?)
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    super::write_bytes(path, &bytes)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    read_json::<TrajectoryJson>(path)?.to_trajectory()
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    write_json(path, &trajectory_json(t))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate()?;
    Ok(k)
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `t_ns,masked_rmse,unmasked_variance,seed,steps`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    csv_string(rows)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    name: &'a str,
    rot_err: f64,
    trans_err_relative: Option<f64>,
    trans_err_metric: Option<f64>,
    cam_mc_relative: Option<f64>,
    cam_mc_metric: Option<f64>,
    n_frames: usize,
}

/// One row per named report; metrics that were not computed are left empty.
pub fn metric_csv(rows: &[(String, MetricReport)]) -> Result<String> {
    csv_string(rows.iter().map(|(name, r)| MetricRow {
        name,
        rot_err: r.rot_err,
        trans_err_relative: r.trans_err_relative,
        trans_err_metric: r.trans_err_metric,
        cam_mc_relative: r.cam_mc_relative,
        cam_mc_metric: r.cam_mc_metric,
        n_frames: r.n_frames,
    }))
}
