//! Per-clip camera files: an optional URL line, then one line per frame with
//! `timestamp fx fy cx cy 0 0` (intrinsics as fractions of the image size) followed by
//! the 3×4 world-to-camera matrix in row-major order.
//!
//! Lines starting with `#` are comments. `# frame_stride N` records the sampling stride
//! the clip was drawn with; it is carried through but never used in computation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose, PoseConvention, ScaleSpace, Trajectory};

pub const FIELDS_PER_LINE: usize = 19;

/// Printed rotations carry about six decimals, so they are projected onto SO(3) when
/// they deviate by less than this.
pub const POSE_FILE_ROTATION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    /// Microseconds.
    pub timestamp: i64,
    /// `fx fy cx cy` normalized by image width and height.
    pub intrinsics: [f64; 4],
    /// Row-major `[R | t]`.
    pub w2c: [f64; 12],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub frames: Vec<PoseFrame>,
    pub source_url: Option<String>,
    pub frame_stride: Option<u32>,
}

impl PoseFrame {
    pub fn pose(&self) -> Result<Pose> {
        let m = &self.w2c;
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Pose::from_approx(r, Vector3::new(m[3], m[7], m[11]), POSE_FILE_ROTATION_TOL)
    }

    pub fn pixel_intrinsics(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let [fx, fy, cx, cy] = self.intrinsics;
        CameraIntrinsics::from_normalized(fx, fy, cx, cy, width, height)
    }
}

impl ClipRecord {
    /// World-to-camera trajectory at the clip's relative scale.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let poses = self.frames.iter().map(PoseFrame::pose).collect::<Result<Vec<_>>>()?;
        Ok(Trajectory::new(
            poses,
            PoseConvention::WorldToCamera,
            ScaleSpace::Relative,
        ))
    }
}

fn parse_frame(line: &str, lineno: usize) -> Result<PoseFrame> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != FIELDS_PER_LINE {
        return Err(Error::parse(
            lineno,
            format!("expected {FIELDS_PER_LINE} fields, found {}", fields.len()),
        ));
    }
    let timestamp = fields[0]
        .parse::<i64>()
        .map_err(|e| Error::parse(lineno, format!("timestamp {:?}: {e}", fields[0])))?;
    let mut reals = [0.0; 18];
    for (slot, tok) in reals.iter_mut().zip(&fields[1..]) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(lineno, format!("not a finite number: {tok:?}")))?;
    }
    let mut intrinsics = [0.0; 4];
    intrinsics.copy_from_slice(&reals[..4]);
    let mut w2c = [0.0; 12];
    w2c.copy_from_slice(&reals[6..]);
    Ok(PoseFrame {
        timestamp,
        intrinsics,
        w2c,
    })
}

fn looks_like_frame(line: &str) -> bool {
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields.len() == FIELDS_PER_LINE && fields.iter().all(|t| t.parse::<f64>().is_ok())
}

/// Parses a clip's camera file. A first line that is not a frame line is the source URL.
pub fn parse_pose_file(text: &str, clip_id: &str) -> Result<ClipRecord> {
    let lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut source_url = None;
    let mut frame_stride = None;
    let mut frames: Vec<PoseFrame> = Vec::new();
    let mut lines = lines.peekable();
    match lines.peek() {
        None => return Err(Error::parse(1, "empty pose file")),
        Some((_, "")) => return Err(Error::parse(1, "first line is empty")),
        Some((_, first)) if !first.starts_with('#') && !looks_like_frame(first) => {
            source_url = Some(first.to_string());
            lines.next();
        }
        Some(_) => {}
    }
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("frame_stride") {
                let stride = v
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| Error::parse(lineno, format!("frame_stride {:?}: {e}", v.trim())))?;
                frame_stride = Some(stride);
            }
            continue;
        }
        let frame = parse_frame(line, lineno)?;
        if frames.last().is_some_and(|p| p.timestamp >= frame.timestamp) {
            return Err(Error::Ordering(lineno));
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::parse(text.lines().count().max(1), "no frame lines"));
    }
    Ok(ClipRecord {
        clip_id: clip_id.to_string(),
        frames,
        source_url,
        frame_stride,
    })
}

pub fn write_pose_file(rec: &ClipRecord) -> String {
    let mut out = String::new();
    if let Some(url) = &rec.source_url {
        out.push_str(url);
        out.push('\n');
    }
    if let Some(stride) = rec.frame_stride {
        writeln!(out, "# frame_stride {stride}").unwrap();
    }
    for f in &rec.frames {
        write!(out, "{}", f.timestamp).unwrap();
        for v in &f.intrinsics {
            write!(out, " {v}").unwrap();
        }
        out.push_str(" 0 0");
        for v in &f.w2c {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads a camera file; the clip id is the file stem.
pub fn read_pose_file(path: &Path) -> Result<ClipRecord> {
    let text = std::fs::read_to_string(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_pose_file(&text, &id)
}
