//! Deterministic synthetic data: a textured room scene for end-to-end runs and
//! SfM-style clips with known metric scale for alignment checks.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{CameraIntrinsics, Pose, PoseConvention, ScaleSpace, Trajectory};
use crate::io::{
    self, write_colmap_images, write_colmap_points, write_pose_file, ClipRecord, ColmapImage, ColmapPoint, PoseFrame,
};
use crate::raster::{ColorRaster, DepthRaster};
use crate::scale_align::{point_depth_in_frame, Observation, SparsePoint};

/// A single RGB-D view with intrinsics and camera keyframes.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: ColorRaster,
    pub depth: DepthRaster,
    pub k: CameraIntrinsics,
    /// Canonical camera-to-world keyframes in meters.
    pub keyframes: Trajectory,
}

const ROOM_MIN: [f64; 3] = [-2.0, -1.5, -1.0];
const ROOM_MAX: [f64; 3] = [2.0, 1.5, 6.0];
const CUBE_CENTER: [f64; 3] = [0.6, 0.4, 3.0];
const CUBE_HALF: f64 = 0.45;

/// Entry and exit parameters of a ray against an axis-aligned box.
fn slab(origin: &Vector3<f64>, dir: &Vector3<f64>, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64, usize)> {
    let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut near, mut far) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        if near > t0 {
            t0 = near;
            axis = a;
        }
        t1 = t1.min(far);
    }
    (t0 <= t1).then_some((t0, t1, axis))
}

fn checker(p: &Vector3<f64>) -> bool {
    let s: i64 = p.iter().map(|c| (c * 2.0).floor() as i64).sum();
    s.rem_euclid(2) == 0
}

fn quantize(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c * 255.0).round() / 255.0)
}

/// A camera at the origin looking down +z into a checkered room that holds one cube.
/// Colors are multiples of 1/255 so they survive 8-bit PNG exactly.
pub fn box_scene(width: usize, height: usize) -> Result<SyntheticScene> {
    let f = 0.8 * width as f64;
    let k = CameraIntrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)?;
    let origin = Vector3::zeros();
    let lo = CUBE_CENTER.map(|c| c - CUBE_HALF);
    let hi = CUBE_CENTER.map(|c| c + CUBE_HALF);
    let mut image = ColorRaster::black(width, height);
    let mut depth = DepthRaster::filled(width, height, 0.0)?;
    for v in 0..height {
        for u in 0..width {
            let dir = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let (t, rgb) = match slab(&origin, &dir, lo, hi) {
                Some((t0, _, axis)) if t0 > 0.0 => {
                    let shade = [0.95, 0.8, 0.65][axis];
                    (t0, [0.9 * shade, 0.35 * shade, 0.2 * shade])
                }
                _ => {
                    let (_, t1, _) = slab(&origin, &dir, ROOM_MIN, ROOM_MAX).expect("camera is inside the room");
                    let p = origin + dir * t1;
                    let wall = (0..3)
                        .find(|&a| (p[a] - ROOM_MIN[a]).abs() < 1e-9 || (p[a] - ROOM_MAX[a]).abs() < 1e-9)
                        .unwrap_or(2);
                    let base = [[0.3, 0.5, 0.8], [0.7, 0.7, 0.6], [0.4, 0.75, 0.4]][wall];
                    let s = if checker(&p) { 1.0 } else { 0.7 };
                    (t1, base.map(|c| c * s))
                }
            };
            depth.set(u, v, t as f32);
            image.set(u, v, quantize(rgb));
        }
    }
    let keyframes = Trajectory::new(
        [
            (0.0, [0.0, 0.0, 0.0]),
            (4.0, [0.15, -0.02, 0.35]),
            (8.0, [0.3, -0.04, 0.7]),
            (12.0, [0.4, -0.05, 1.0]),
        ]
        .iter()
        .map(|(yaw, t)| {
            let r: Matrix3<f64> = *Rotation3::from_axis_angle(&Vector3::y_axis(), f64::to_radians(*yaw)).matrix();
            Pose::new(r, Vector3::from(*t))
        })
        .collect::<Result<_>>()?,
        PoseConvention::CameraToWorld,
        ScaleSpace::Metric,
    );
    Ok(SyntheticScene {
        image,
        depth,
        k,
        keyframes,
    })
}

/// Writes `image.png`, `depth.pfm`, `intrinsics.json` and `keyframes.json`.
pub fn write_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    io::write_color_png(&dir.join("image.png"), &scene.image)?;
    io::write_pfm(&dir.join("depth.pfm"), &scene.depth)?;
    io::write_json(&dir.join("intrinsics.json"), &scene.k)?;
    io::write_trajectory(&dir.join("keyframes.json"), &scene.keyframes)
}

/// Adds Gaussian rotation (radians) and translation noise to every pose but the first.
pub fn perturb_trajectory(traj: &Trajectory, seed: u64, rot_sigma: f64, trans_sigma: f64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = traj.clone();
    for p in out.poses.iter_mut().skip(1) {
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let axis = Vector3::new(g(), g(), g());
        let angle = rot_sigma * g();
        let dt = Vector3::new(g(), g(), g()) * trans_sigma;
        let dr = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        *p = Pose::from_approx(dr.matrix() * p.rotation(), p.translation() + dt, 1e-6)?;
    }
    Ok(out)
}

/// An SfM-style clip whose depth rasters are `alpha_star` times the SfM depths.
#[derive(Debug, Clone)]
pub struct AlignmentClip {
    pub clip_id: String,
    pub alpha_star: f64,
    pub k: CameraIntrinsics,
    /// World-to-camera, relative scale.
    pub traj_w2c: Trajectory,
    pub points: Vec<SparsePoint>,
    pub depths: BTreeMap<usize, DepthRaster>,
    pub corrupted_observations: usize,
    pub total_observations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ClipSpec {
    pub frames: usize,
    pub points: usize,
    pub width: usize,
    pub height: usize,
    /// Fraction of observations whose metric depth is multiplied by `100^u`, `u ∈ [-1, 1]`.
    pub corruption: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frames: 5,
            points: 80,
            width: 64,
            height: 64,
            corruption: 0.0,
        }
    }
}

/// Random cloud and small camera motion. Every observation sits on an integer interior
/// pixel that no other point in the same frame uses, and the raster stores
/// `alpha_star · d_sfm` there; all other pixels are invalid.
pub fn alignment_clip(clip_id: &str, alpha_star: f64, seed: u64, layout: ClipSpec) -> Result<AlignmentClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (layout.width, layout.height);
    let k = CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h)?;
    let poses = (0..layout.frames)
        .map(|f| {
            if f == 0 {
                return Ok(Pose::identity());
            }
            let yaw = rng.random_range(-0.05..0.05);
            let r: Matrix3<f64> = *Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).matrix();
            let t = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.3..0.3),
            );
            Pose::new(r, t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points: Vec<SparsePoint> = (0..layout.points)
        .map(|i| SparsePoint {
            id: i as u64 + 1,
            xyz: Vector3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(3.0..8.0),
            ),
            track: Vec::new(),
        })
        .collect();
    let mut depths = BTreeMap::new();
    let (mut corrupted, mut total) = (0, 0);
    for (f, pose) in poses.iter().enumerate() {
        let mut raster = DepthRaster::filled(w, h, 0.0)?;
        for p in &mut points {
            let c = pose.transform_point(&p.xyz);
            let u = (k.fx * c.x / c.z + k.cx).round();
            let v = (k.fy * c.y / c.z + k.cy).round();
            if c.z <= 0.0 || u < 1.0 || v < 1.0 || u > (w - 2) as f64 || v > (h - 2) as f64 {
                continue;
            }
            let (ui, vi) = (u as usize, v as usize);
            if raster.get(ui, vi) != 0.0 {
                continue;
            }
            let mut d = alpha_star * point_depth_in_frame(p, pose);
            if rng.random_bool(layout.corruption) {
                d *= 100f64.powf(rng.random_range(-1.0..=1.0));
                corrupted += 1;
            }
            raster.set(ui, vi, d as f32);
            p.track.push(Observation { frame: f, u, v });
            total += 1;
        }
        depths.insert(f, raster);
    }
    Ok(AlignmentClip {
        clip_id: clip_id.to_string(),
        alpha_star,
        k,
        traj_w2c: Trajectory::new(poses, PoseConvention::WorldToCamera, ScaleSpace::Relative),
        points,
        depths,
        corrupted_observations: corrupted,
        total_observations: total,
    })
}

pub fn frame_image_name(frame: usize) -> String {
    format!("frame_{frame:04}.png")
}

/// The clip as a COLMAP text export: image `f` has id `f + 1` and 2D point index equal to
/// the observation's position in that image.
pub fn colmap_export(clip: &AlignmentClip) -> (Vec<ColmapPoint>, BTreeMap<u32, ColmapImage>) {
    let mut images: BTreeMap<u32, ColmapImage> = clip
        .traj_w2c
        .poses
        .iter()
        .enumerate()
        .map(|(f, pose)| {
            let id = f as u32 + 1;
            (
                id,
                ColmapImage {
                    id,
                    pose: *pose,
                    camera_id: 1,
                    name: frame_image_name(f),
                    observations: Vec::new(),
                },
            )
        })
        .collect();
    let points = clip
        .points
        .iter()
        .map(|p| {
            let track = p
                .track
                .iter()
                .map(|o| {
                    let img = images.get_mut(&(o.frame as u32 + 1)).expect("frame has an image");
                    img.observations.push((o.u, o.v, p.id as i64));
                    (img.id, img.observations.len() as u32 - 1)
                })
                .collect();
            ColmapPoint {
                id: p.id,
                xyz: p.xyz,
                rgb: [128, 128, 128],
                error: 0.5,
                track,
            }
        })
        .collect();
    (points, images)
}

/// Camera file for the clip; intrinsics are written normalized and rotations exactly.
pub fn clip_record(clip: &AlignmentClip) -> ClipRecord {
    let (w, h) = (clip.k.width as f64, clip.k.height as f64);
    ClipRecord {
        clip_id: clip.clip_id.clone(),
        source_url: Some(format!("https://example.com/{}", clip.clip_id)),
        frame_stride: Some(8),
        frames: clip
            .traj_w2c
            .poses
            .iter()
            .enumerate()
            .map(|(f, p)| {
                let r = p.rotation_row_major();
                let t = p.translation();
                PoseFrame {
                    timestamp: f as i64 * 33_367,
                    intrinsics: [clip.k.fx / w, clip.k.fy / h, clip.k.cx / w, clip.k.cy / h],
                    w2c: [r[0], r[1], r[2], t.x, r[3], r[4], r[5], t.y, r[6], r[7], r[8], t.z],
                }
            })
            .collect(),
    }
}

/// Adds a clip to a dataset tree: `poses/{clip}.txt`, `colmap/{clip}/{points3D,images}.txt`
/// and `depths/{clip}/frame_NNNN.pfm`.
pub fn write_alignment_clip(root: &Path, clip: &AlignmentClip) -> Result<()> {
    let colmap = root.join("colmap").join(&clip.clip_id);
    let poses = root.join("poses");
    std::fs::create_dir_all(&colmap)?;
    std::fs::create_dir_all(&poses)?;
    std::fs::write(
        poses.join(format!("{}.txt", clip.clip_id)),
        write_pose_file(&clip_record(clip)),
    )?;
    let (points, images) = colmap_export(clip);
    std::fs::write(colmap.join("points3D.txt"), write_colmap_points(&points))?;
    std::fs::write(colmap.join("images.txt"), write_colmap_images(&images))?;
    let depths = root.join("depths").join(&clip.clip_id);
    for (f, d) in &clip.depths {
        io::write_pfm(&depths.join(format!("frame_{f:04}.pfm")), d)?;
    }
    Ok(())
}
