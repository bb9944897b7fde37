//! Camera-controllability metrics between a ground-truth and a generated trajectory.
//!
//! Both trajectories must be canonical camera-to-world with equal length. Translation
//! terms are divided by a per-clip scene scale: the distance from the first camera to
//! the farthest one. Relative mode normalizes each trajectory by its own scale; metric
//! mode divides both by the ground-truth scale.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_angle, PoseConvention, Trajectory};

#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    gt: Trajectory,
    gen: Trajectory,
}

impl TrajectoryPair {
    pub fn new(gt: Trajectory, gen: Trajectory) -> Result<Self> {
        for (t, name) in [(&gt, "ground-truth"), (&gen, "generated")] {
            if t.convention != PoseConvention::CameraToWorld {
                return Err(Error::InvalidInput(format!(
                    "{name} trajectory must be camera_to_world"
                )));
            }
            if !t.is_canonical() {
                return Err(Error::InvalidInput(format!("{name} trajectory must be canonical")));
            }
        }
        if gt.len() != gen.len() {
            return Err(Error::Shape(format!(
                "trajectories have {} and {} frames",
                gt.len(),
                gen.len()
            )));
        }
        if gt.len() < 2 {
            return Err(Error::InvalidInput("metrics need at least 2 frames".into()));
        }
        Ok(Self { gt, gen })
    }

    pub fn gt(&self) -> &Trajectory {
        &self.gt
    }

    pub fn gen(&self) -> &Trajectory {
        &self.gen
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransMode {
    Relative,
    Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Relative,
    Metric,
    Both,
}

impl EvalMode {
    fn includes(self, mode: TransMode) -> bool {
        match self {
            EvalMode::Both => true,
            EvalMode::Relative => mode == TransMode::Relative,
            EvalMode::Metric => mode == TransMode::Metric,
        }
    }
}

fn max_translation_norm(traj: &Trajectory) -> f64 {
    traj.poses.iter().map(|p| p.translation().norm()).fold(0.0, f64::max)
}

/// Largest camera distance from the first (origin) camera.
pub fn scene_scale(traj: &Trajectory) -> Result<f64> {
    let s = max_translation_norm(traj);
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::DegenerateScale("given"))
    }
}

/// Σᵢ arccos((tr(R̃ᵢ Rᵢᵀ) − 1) / 2), in radians.
pub fn rot_err(pair: &TrajectoryPair) -> f64 {
    pair.gt
        .poses
        .iter()
        .zip(&pair.gen.poses)
        .map(|(g, e)| rotation_angle(&(e.rotation() * g.rotation().transpose())))
        .sum()
}

fn scales(pair: &TrajectoryPair, mode: TransMode) -> Result<(f64, f64)> {
    let s_gt = max_translation_norm(&pair.gt);
    if s_gt <= 0.0 {
        return Err(Error::DegenerateScale("ground-truth"));
    }
    let s_gen = match mode {
        TransMode::Metric => s_gt,
        TransMode::Relative => {
            let s = max_translation_norm(&pair.gen);
            if s <= 0.0 {
                return Err(Error::DegenerateScale("generated"));
            }
            s
        }
    };
    Ok((s_gt, s_gen))
}

fn normalized_translations(
    pair: &TrajectoryPair,
    mode: TransMode,
) -> Result<impl Iterator<Item = (Vector3<f64>, Vector3<f64>)> + '_> {
    let (s_gt, s_gen) = scales(pair, mode)?;
    Ok(pair
        .gt
        .poses
        .iter()
        .zip(&pair.gen.poses)
        .map(move |(g, e)| (g.translation() / s_gt, e.translation() / s_gen)))
}

/// Σᵢ ‖T̃ᵢ/s̃ − Tᵢ/s‖₂.
pub fn trans_err(pair: &TrajectoryPair, mode: TransMode) -> Result<f64> {
    Ok(normalized_translations(pair, mode)?.map(|(g, e)| (e - g).norm()).sum())
}

/// Σᵢ ‖[R̃ᵢ | T̃ᵢ/s̃] − [Rᵢ | Tᵢ/s]‖_F.
pub fn cam_mc(pair: &TrajectoryPair, mode: TransMode) -> Result<f64> {
    let rotations = pair.gt.poses.iter().zip(&pair.gen.poses);
    Ok(normalized_translations(pair, mode)?
        .zip(rotations)
        .map(|((tg, te), (g, e))| {
            let rot_sq = (e.rotation() - g.rotation()).norm_squared();
            (rot_sq + (te - tg).norm_squared()).sqrt()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rot_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trans_err_relative: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trans_err_metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cam_mc_relative: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cam_mc_metric: Option<f64>,
    pub n_frames: usize,
    pub scene_scale_gt: f64,
    pub scene_scale_gen: f64,
}

pub fn evaluate(pair: &TrajectoryPair, mode: EvalMode) -> Result<MetricReport> {
    let relative = mode.includes(TransMode::Relative);
    let metric = mode.includes(TransMode::Metric);
    let run = |on: bool, f: fn(&TrajectoryPair, TransMode) -> Result<f64>, m| -> Result<Option<f64>> {
        if on {
            f(pair, m).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(MetricReport {
        rot_err: rot_err(pair),
        trans_err_relative: run(relative, trans_err, TransMode::Relative)?,
        trans_err_metric: run(metric, trans_err, TransMode::Metric)?,
        cam_mc_relative: run(relative, cam_mc, TransMode::Relative)?,
        cam_mc_metric: run(metric, cam_mc, TransMode::Metric)?,
        n_frames: pair.len(),
        scene_scale_gt: max_translation_norm(&pair.gt),
        scene_scale_gen: max_translation_norm(&pair.gen),
    })
}

/// Two-level mean over samples and trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub report: MetricReport,
    pub samples: usize,
    pub trials: usize,
    /// Samples dropped because none of their trials succeeded.
    pub skipped_samples: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_opt<'a>(reports: &'a [MetricReport], field: fn(&'a MetricReport) -> Option<f64>) -> Option<f64> {
    let values: Option<Vec<f64>> = reports.iter().map(field).collect();
    values.map(|v| mean(v.into_iter()))
}

fn mean_report(reports: &[MetricReport]) -> MetricReport {
    MetricReport {
        rot_err: mean(reports.iter().map(|r| r.rot_err)),
        trans_err_relative: mean_opt(reports, |r| r.trans_err_relative),
        trans_err_metric: mean_opt(reports, |r| r.trans_err_metric),
        cam_mc_relative: mean_opt(reports, |r| r.cam_mc_relative),
        cam_mc_metric: mean_opt(reports, |r| r.cam_mc_metric),
        n_frames: mean(reports.iter().map(|r| r.n_frames as f64)).round() as usize,
        scene_scale_gt: mean(reports.iter().map(|r| r.scene_scale_gt)),
        scene_scale_gen: mean(reports.iter().map(|r| r.scene_scale_gen)),
    }
}

/// Averages each sample's successful trials first, then averages across samples.
pub fn aggregate(trials: &BTreeMap<String, Vec<MetricReport>>) -> Result<AggregateReport> {
    let mut per_sample = Vec::new();
    let mut skipped = 0;
    let mut n_trials = 0;
    for (id, reports) in trials {
        if reports.is_empty() {
            warn!("sample {id} has no successful trials; excluded");
            skipped += 1;
            continue;
        }
        n_trials += reports.len();
        per_sample.push(mean_report(reports));
    }
    if per_sample.is_empty() {
        return Err(Error::EmptyInput("no sample has a successful trial"));
    }
    Ok(AggregateReport {
        report: mean_report(&per_sample),
        samples: per_sample.len(),
        trials: n_trials,
        skipped_samples: skipped,
    })
}
