//! Metric zeros, the 180° case, scale behavior of both translation modes and two-level
//! aggregation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenecam::geometry::{apply_scale, canonicalize, Pose, PoseConvention, ScaleSpace, Trajectory};
use scenecam::metrics::{aggregate, evaluate, rot_err, trans_err, EvalMode, MetricReport, TrajectoryPair, TransMode};

use crate::geometry::random_pose;
use crate::{ensure, Outcome};

fn err(e: scenecam::Error) -> String {
    e.to_string()
}

fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    let t = Trajectory::new(
        (0..n).map(|_| random_pose(rng, 3.0)).collect(),
        PoseConvention::CameraToWorld,
        ScaleSpace::Relative,
    );
    canonicalize(&t).unwrap()
}

fn zero_on_identical() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let n = rng.random_range(2..20);
        let t = random_traj(&mut rng, n);
        let r = evaluate(&TrajectoryPair::new(t.clone(), t).map_err(err)?, EvalMode::Both).map_err(err)?;
        let vals = [
            r.rot_err,
            r.trans_err_relative.unwrap(),
            r.trans_err_metric.unwrap(),
            r.cam_mc_relative.unwrap(),
            r.cam_mc_metric.unwrap(),
        ];
        ensure(vals.iter().all(|v| *v == 0.0), || {
            format!("non-zero metrics on identical input: {vals:?}")
        })?;
    }
    Ok("all metrics 0 on 50 identical pairs".into())
}

fn half_turn() -> Result<String, String> {
    let t1 = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
    let gt = Trajectory::new(
        vec![Pose::identity(), t1],
        PoseConvention::CameraToWorld,
        ScaleSpace::Metric,
    );
    let rz = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
    let turned = Pose::new(rz, *t1.translation()).map_err(err)?;
    let gen = Trajectory::new(
        vec![Pose::identity(), turned],
        PoseConvention::CameraToWorld,
        ScaleSpace::Metric,
    );
    let r = rot_err(&TrajectoryPair::new(gt, gen).map_err(err)?);
    ensure((r - PI).abs() <= 1e-12, || format!("rot_err {r} != pi"))?;
    Ok(format!("180 deg discrepancy gives rot_err {r:.15}"))
}

fn scale_behavior() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut worst_rel: f64 = 0.0;
    let mut worst_joint: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let gt = random_traj(&mut rng, n);
        let gen = random_traj(&mut rng, n);
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
        let base = TrajectoryPair::new(gt.clone(), gen.clone()).map_err(err)?;
        let scaled_each =
            TrajectoryPair::new(apply_scale(&gt, a).map_err(err)?, apply_scale(&gen, b).map_err(err)?).map_err(err)?;
        let r0 = trans_err(&base, TransMode::Relative).map_err(err)?;
        let r1 = trans_err(&scaled_each, TransMode::Relative).map_err(err)?;
        worst_rel = worst_rel.max((r0 - r1).abs() / r0.max(1e-300));

        let m0 = trans_err(&base, TransMode::Metric).map_err(err)?;
        let joint =
            TrajectoryPair::new(apply_scale(&gt, a).map_err(err)?, apply_scale(&gen, a).map_err(err)?).map_err(err)?;
        let m1 = trans_err(&joint, TransMode::Metric).map_err(err)?;
        worst_joint = worst_joint.max((m0 - m1).abs() / m0.max(1e-300));
    }
    ensure(worst_rel <= 1e-9, || {
        format!("relative TransErr changed by {worst_rel:e} under independent scaling")
    })?;
    ensure(worst_joint <= 1e-9, || {
        format!("metric TransErr changed by {worst_joint:e} under joint scaling")
    })?;

    // gen = gt with translations doubled: relative 0, metric sum(|T_i|)/s > 0.
    let gt = random_traj(&mut rng, 8);
    let doubled = apply_scale(&gt, 2.0).map_err(err)?;
    let pair = TrajectoryPair::new(gt.clone(), doubled).map_err(err)?;
    let rel = trans_err(&pair, TransMode::Relative).map_err(err)?;
    let met = trans_err(&pair, TransMode::Metric).map_err(err)?;
    let s = gt.poses.iter().map(|p| p.translation().norm()).fold(0.0, f64::max);
    let want: f64 = gt.poses.iter().map(|p| p.translation().norm() / s).sum();
    ensure(rel.abs() <= 1e-12, || format!("relative TransErr {rel} on doubled gen"))?;
    ensure((met - want).abs() <= 1e-9 * want && met > 0.0, || {
        format!("metric TransErr {met}, expected {want}")
    })?;
    Ok(format!(
        "relative invariant ({worst_rel:.1e}), metric joint-invariant ({worst_joint:.1e}) and gen-only sensitive ({met:.3})"
    ))
}

fn report(rng: &mut ChaCha8Rng) -> MetricReport {
    MetricReport {
        rot_err: rng.random_range(0.0..3.0),
        trans_err_relative: Some(rng.random_range(0.0..3.0)),
        trans_err_metric: Some(rng.random_range(0.0..3.0)),
        cam_mc_relative: Some(rng.random_range(0.0..3.0)),
        cam_mc_metric: Some(rng.random_range(0.0..3.0)),
        n_frames: 16,
        scene_scale_gt: rng.random_range(0.5..2.0),
        scene_scale_gen: rng.random_range(0.5..2.0),
    }
}

fn nested_mean() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut trials: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for s in 0..3 {
        trials.insert(format!("sample_{s}"), (0..5).map(|_| report(&mut rng)).collect());
    }
    let agg = aggregate(&trials).map_err(err)?;
    type Field = fn(&MetricReport) -> f64;
    let fields: [(&str, Field); 5] = [
        ("rot_err", |r| r.rot_err),
        ("trans_err_relative", |r| r.trans_err_relative.unwrap()),
        ("trans_err_metric", |r| r.trans_err_metric.unwrap()),
        ("cam_mc_relative", |r| r.cam_mc_relative.unwrap()),
        ("cam_mc_metric", |r| r.cam_mc_metric.unwrap()),
    ];
    for (name, get) in fields {
        let mut sample_means = [0.0; 3];
        for (i, reports) in trials.values().enumerate() {
            let mut sum = 0.0;
            for r in reports {
                sum += get(r);
            }
            sample_means[i] = sum / 5.0;
        }
        let want = (sample_means[0] + sample_means[1] + sample_means[2]) / 3.0;
        let got = get(&agg.report);
        ensure((got - want).abs() <= 1e-12, || {
            format!("{name}: aggregate {got} vs nested mean {want}")
        })?;
    }
    ensure(agg.samples == 3 && agg.trials == 15, || {
        "sample/trial counts wrong".into()
    })?;
    Ok("3x5 aggregate matches nested-mean oracle".into())
}

pub fn run() -> Outcome {
    let parts = [zero_on_identical()?, half_turn()?, scale_behavior()?, nested_mean()?];
    Ok(parts.join("; "))
}
