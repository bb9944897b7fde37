//! Readers and writers for external formats.
//!
//! Every writer/reader pair round-trips valid data bit-exactly. Parsers return
//! [`Error::Parse`](crate::Error::Parse) with a 1-based line number for text formats and
//! [`Error::Format`](crate::Error::Format) with a byte offset for binary ones.

mod colmap;
mod json;
mod pbm;
mod pfm;
mod ply;
mod png_io;
mod pose_file;

pub use colmap::{
    image_frame_order, join_tracks, parse_colmap_images, parse_colmap_points, write_colmap_images, write_colmap_points,
    ColmapImage, ColmapPoint,
};
pub use json::{
    metric_csv, parse_trajectory_json, read_intrinsics, read_json, read_trajectory, sweep_csv, trajectory_json,
    write_json, write_trajectory, PoseJson, TrajectoryJson,
};
pub use pbm::{decode_pbm, encode_pbm, read_pbm, write_pbm};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply};
pub use png_io::{
    decode_color_png, decode_depth_png16, encode_color_png, encode_depth_png16, read_color_png, read_depth,
    write_color_png, write_depth_png16,
};
pub use pose_file::{parse_pose_file, read_pose_file, write_pose_file, ClipRecord, PoseFrame, POSE_FILE_ROTATION_TOL};

use std::path::Path;

use crate::error::Result;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(std::fs::write(path, bytes)?)
}
