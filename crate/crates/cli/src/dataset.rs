//! Dataset-level scale alignment over a tree of
//! `colmap/{clip}/{points3D,images}.txt`, `depths/{clip}/{image stem}.{pfm,png}` and
//! `poses/{clip}.txt`.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;

use scenecam::geometry::{canonicalize, PoseConvention, ScaleSpace, Trajectory};
use scenecam::io;
use scenecam::raster::DepthRaster;
use scenecam::scale_align::{align_clip, filter_clips, to_metric, AlignConfig, ScaleAlignment};
use scenecam::{Error, Result};

pub struct DatasetAlignment {
    /// Clips that produced a factor, in clip-id order, after outlier filtering.
    pub alignments: Vec<ScaleAlignment>,
    /// Canonical metric camera-to-world trajectories of the accepted clips.
    pub metric_trajectories: Vec<(String, Trajectory)>,
    /// Clips that could not be aligned, with the reason.
    pub failures: Vec<(String, String)>,
}

fn find_depth(dir: &Path, stem: &str) -> Option<std::path::PathBuf> {
    ["pfm", "png"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

pub fn align_one(
    clip: &str,
    colmap_dir: &Path,
    depths_dir: &Path,
    poses_dir: &Path,
    cfg: &AlignConfig,
) -> Result<ScaleAlignment> {
    let cdir = colmap_dir.join(clip);
    let points = io::parse_colmap_points(&std::fs::read_to_string(cdir.join("points3D.txt"))?)?;
    let images = io::parse_colmap_images(&std::fs::read_to_string(cdir.join("images.txt"))?)?;
    let order = io::image_frame_order(&images);
    let mut by_frame: Vec<_> = images.values().map(|img| (order[&img.id], img)).collect();
    by_frame.sort_by_key(|(f, _)| *f);

    let mut depths: BTreeMap<usize, DepthRaster> = BTreeMap::new();
    for (f, img) in &by_frame {
        let stem = Path::new(&img.name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let path = find_depth(&depths_dir.join(clip), &stem)
            .ok_or_else(|| Error::InvalidInput(format!("no depth raster for image {}", img.name)))?;
        depths.insert(*f, io::read_depth(&path)?);
    }
    let record = io::read_pose_file(&poses_dir.join(format!("{clip}.txt")))?;
    let first = depths.values().next().ok_or(Error::EmptyInput("clip has no images"))?;
    let k = record.frames[0].pixel_intrinsics(first.width(), first.height())?;
    let traj = Trajectory::new(
        by_frame.iter().map(|(_, img)| img.pose).collect(),
        PoseConvention::WorldToCamera,
        ScaleSpace::Relative,
    );
    let tracks = io::join_tracks(&points, &images);
    align_clip(clip, &tracks, &depths, &k, &traj, cfg)
}

pub fn align_dataset(
    colmap_dir: &Path,
    depths_dir: &Path,
    poses_dir: &Path,
    cfg: &AlignConfig,
    quantile: f64,
) -> Result<DatasetAlignment> {
    let mut clips: Vec<String> = std::fs::read_dir(colmap_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    clips.sort();
    let mut aligned = Vec::new();
    let mut failures = Vec::new();
    for clip in &clips {
        match align_one(clip, colmap_dir, depths_dir, poses_dir, cfg) {
            Ok(a) => aligned.push(a),
            Err(e) => {
                warn!("clip {clip}: {e}");
                failures.push((clip.clone(), e.to_string()));
            }
        }
    }
    if aligned.is_empty() {
        return Err(Error::AlignmentFailed(format!(
            "none of {} clips could be aligned",
            clips.len()
        )));
    }
    let alignments = filter_clips(aligned, quantile)?;
    let mut metric_trajectories = Vec::new();
    for a in alignments.iter().filter(|a| a.accepted) {
        let record = io::read_pose_file(&poses_dir.join(format!("{}.txt", a.clip_id)))?;
        let c2w = canonicalize(&record.trajectory()?.to_camera_to_world())?;
        metric_trajectories.push((a.clip_id.clone(), to_metric(&c2w, a)?));
    }
    Ok(DatasetAlignment {
        alignments,
        metric_trajectories,
        failures,
    })
}
