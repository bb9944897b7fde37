//! Pose algebra round trips, canonicalization idempotence and unproject/project round trips.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenecam::geometry::{canonicalize, unproject, CameraIntrinsics, Pose, PoseConvention, ScaleSpace, Trajectory};
use scenecam::raster::DepthRaster;
use scenecam::renderer::project_point;

use crate::{ensure, Outcome};

pub fn random_pose(rng: &mut ChaCha8Rng, t_range: f64) -> Pose {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(-3.1..3.1);
    let r: Matrix3<f64> = *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix();
    let t = Vector3::new(
        rng.random_range(-t_range..t_range),
        rng.random_range(-t_range..t_range),
        rng.random_range(-t_range..t_range),
    );
    Pose::new(r, t).expect("rotation from axis-angle is proper")
}

fn max_abs_diff(a: &Pose, b: &Pose) -> f64 {
    (a.to_homogeneous() - b.to_homogeneous()).abs().max()
}

fn pose_roundtrips() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let a = random_pose(&mut rng, 10.0);
        let b = random_pose(&mut rng, 10.0);
        let errs = [
            a.compose(&a.inverse()).deviation_from_identity(),
            a.inverse().compose(&a).deviation_from_identity(),
            max_abs_diff(&a.inverse().inverse(), &a),
            max_abs_diff(&a.compose(&b).compose(&b.inverse()), &a),
            // Independent oracle: homogeneous matrix inverse.
            (a.inverse().to_homogeneous() - a.to_homogeneous().try_inverse().unwrap())
                .abs()
                .max(),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
    }
    ensure(worst <= 1e-9, || format!("pose round-trip error {worst:e} > 1e-9"))?;
    Ok(format!("pose round-trip max err {worst:.1e}"))
}

fn canonical_idempotence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let n = rng.random_range(1..20);
        let t = Trajectory::new(
            (0..n).map(|_| random_pose(&mut rng, 5.0)).collect(),
            PoseConvention::CameraToWorld,
            ScaleSpace::Relative,
        );
        let once = canonicalize(&t).map_err(|e| e.to_string())?;
        let twice = canonicalize(&once).map_err(|e| e.to_string())?;
        ensure(once.poses[0] == Pose::identity(), || {
            "first pose is not identity".into()
        })?;
        ensure(once == twice, || "canonicalize is not idempotent".into())?;
    }
    Ok("canonicalize idempotent on 200 trajectories".into())
}

fn unproject_project() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut px_err, mut depth_err): (f64, f64) = (0.0, 0.0);
    let mut checked = 0usize;
    for _ in 0..10 {
        let (w, h) = (64, 64);
        let fx = rng.random_range(30.0..150.0);
        let fy = rng.random_range(30.0..150.0);
        let k = CameraIntrinsics::new(fx, fy, rng.random_range(20.0..44.0), rng.random_range(20.0..44.0), w, h)
            .map_err(|e| e.to_string())?;
        let values: Vec<f32> = (0..w * h)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(0.1f32..50.0)
                }
            })
            .collect();
        let d = DepthRaster::new(w, h, values).map_err(|e| e.to_string())?;
        let cloud = unproject(&d, &k, None).map_err(|e| e.to_string())?;
        let src = cloud.source_pixel.as_ref().ok_or("missing source pixels")?;
        ensure(cloud.len() == d.values().iter().filter(|v| **v > 0.0).count(), || {
            "point count mismatch".into()
        })?;
        for (p, &idx) in cloud.positions.iter().zip(src) {
            let (u, v) = ((idx % w) as f64, (idx / w) as f64);
            let want = d.values()[idx] as f64;
            let proj = project_point(p, &Pose::identity(), &k).ok_or("point projected behind camera")?;
            // Independent pinhole oracle.
            let (ou, ov) = (fx * p.x / p.z + k.cx, fy * p.y / p.z + k.cy);
            px_err = px_err
                .max((proj.u - u).abs())
                .max((proj.v - v).abs())
                .max((ou - u).abs())
                .max((ov - v).abs());
            depth_err = depth_err.max((proj.z - want).abs() / want);
            checked += 1;
        }
    }
    ensure(px_err <= 0.5, || format!("pixel round-trip error {px_err} > 0.5"))?;
    ensure(depth_err <= 1e-6, || {
        format!("relative depth error {depth_err:e} > 1e-6")
    })?;
    Ok(format!(
        "{checked} pixels, max px err {px_err:.1e}, max rel depth err {depth_err:.1e}"
    ))
}

pub fn run() -> Outcome {
    let parts = [pose_roundtrips()?, canonical_idempotence()?, unproject_project()?];
    Ok(parts.join("; "))
}
