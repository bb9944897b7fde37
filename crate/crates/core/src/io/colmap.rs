//! COLMAP text exports: `points3D.txt` and `images.txt`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::warn;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::scale_align::{Observation, SparsePoint};

/// Largest accepted deviation of a quaternion's norm from one.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: Vector3<f64>,
    pub rgb: [u8; 3],
    pub error: f64,
    /// `(image_id, point2d_idx)` pairs.
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera.
    pub pose: Pose,
    pub camera_id: u32,
    pub name: String,
    /// `(x, y, point3d_id)`; `-1` marks an untriangulated keypoint.
    pub observations: Vec<(f64, f64, i64)>,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(tok: Option<&str>, lineno: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(lineno, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(lineno, format!("invalid {what}: {tok:?}")))
}

fn real(tok: Option<&str>, lineno: usize, what: &str) -> Result<f64> {
    let v: f64 = field(tok, lineno, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(lineno, format!("non-finite {what}")))
    }
}

pub fn parse_colmap_points(text: &str) -> Result<Vec<ColmapPoint>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let id = field(it.next(), n, "POINT3D_ID")?;
        let xyz = Vector3::new(
            real(it.next(), n, "X")?,
            real(it.next(), n, "Y")?,
            real(it.next(), n, "Z")?,
        );
        let rgb = [
            field(it.next(), n, "R")?,
            field(it.next(), n, "G")?,
            field(it.next(), n, "B")?,
        ];
        let error = field(it.next(), n, "ERROR")?;
        let rest: Vec<&str> = it.collect();
        if !rest.len().is_multiple_of(2) {
            return Err(Error::parse(n, "track has an odd number of entries"));
        }
        let track = rest
            .chunks(2)
            .map(|c| Ok((field(Some(c[0]), n, "IMAGE_ID")?, field(Some(c[1]), n, "POINT2D_IDX")?)))
            .collect::<Result<_>>()?;
        out.push(ColmapPoint {
            id,
            xyz,
            rgb,
            error,
            track,
        });
    }
    Ok(out)
}

fn parse_image_header(line: &str, n: usize) -> Result<(u32, Pose, u32, String)> {
    let mut it = line.split_whitespace();
    let id = field(it.next(), n, "IMAGE_ID")?;
    let q = Quaternion::new(
        real(it.next(), n, "QW")?,
        real(it.next(), n, "QX")?,
        real(it.next(), n, "QY")?,
        real(it.next(), n, "QZ")?,
    );
    if (q.norm() - 1.0).abs() > QUATERNION_NORM_TOL {
        return Err(Error::parse(n, format!("quaternion norm {} is not unit", q.norm())));
    }
    let t = Vector3::new(
        real(it.next(), n, "TX")?,
        real(it.next(), n, "TY")?,
        real(it.next(), n, "TZ")?,
    );
    let pose =
        Pose::from_quaternion(UnitQuaternion::from_quaternion(q), t).map_err(|e| Error::parse(n, e.to_string()))?;
    let camera_id = field(it.next(), n, "CAMERA_ID")?;
    // Names may contain spaces.
    let name = it.collect::<Vec<_>>().join(" ");
    if name.is_empty() {
        return Err(Error::parse(n, "missing NAME"));
    }
    Ok((id, pose, camera_id, name))
}

fn parse_observations(line: &str, n: usize) -> Result<Vec<(f64, f64, i64)>> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if !toks.len().is_multiple_of(3) {
        return Err(Error::parse(n, "2D point list is not made of (x, y, id) triples"));
    }
    toks.chunks(3)
        .map(|c| {
            Ok((
                real(Some(c[0]), n, "X")?,
                real(Some(c[1]), n, "Y")?,
                field(Some(c[2]), n, "POINT3D_ID")?,
            ))
        })
        .collect()
}

/// Parses `images.txt`. Each image takes two lines; the second may be empty.
pub fn parse_colmap_images(text: &str) -> Result<BTreeMap<u32, ColmapImage>> {
    let mut out = BTreeMap::new();
    let mut lines = content_lines(text);
    while let Some((n, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let (id, pose, camera_id, name) = parse_image_header(line, n)?;
        let observations = match lines.next() {
            Some((m, points)) => parse_observations(points, m)?,
            None => Vec::new(),
        };
        let image = ColmapImage {
            id,
            pose,
            camera_id,
            name,
            observations,
        };
        if out.insert(id, image).is_some() {
            return Err(Error::parse(n, format!("duplicate IMAGE_ID {id}")));
        }
    }
    Ok(out)
}

/// Frame index of each image: its rank when images are sorted by name.
pub fn image_frame_order(images: &BTreeMap<u32, ColmapImage>) -> BTreeMap<u32, usize> {
    let mut by_name: Vec<&ColmapImage> = images.values().collect();
    by_name.sort_by(|a, b| a.name.cmp(&b.name).then(a.id.cmp(&b.id)));
    by_name.iter().enumerate().map(|(f, img)| (img.id, f)).collect()
}

/// Builds point tracks from the images' 2D observations. Untriangulated keypoints are
/// skipped; references to unknown points are dropped with a warning.
pub fn join_tracks(points: &[ColmapPoint], images: &BTreeMap<u32, ColmapImage>) -> Vec<SparsePoint> {
    let order = image_frame_order(images);
    let index: HashMap<u64, usize> = points.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut out: Vec<SparsePoint> = points
        .iter()
        .map(|p| SparsePoint {
            id: p.id,
            xyz: p.xyz,
            track: Vec::new(),
        })
        .collect();
    let mut frames: Vec<(&usize, &ColmapImage)> = images.values().map(|img| (&order[&img.id], img)).collect();
    frames.sort_by_key(|(f, _)| **f);
    for (&frame, img) in frames {
        let mut dangling = 0usize;
        for &(u, v, pid) in &img.observations {
            if pid < 0 {
                continue;
            }
            match index.get(&(pid as u64)) {
                Some(&i) => out[i].track.push(Observation { frame, u, v }),
                None => dangling += 1,
            }
        }
        if dangling > 0 {
            warn!(
                "image {} ({}) references {dangling} unknown 3D point(s); dropped",
                img.id, img.name
            );
        }
    }
    out
}

pub fn write_colmap_points(points: &[ColmapPoint]) -> String {
    let mut s = String::from("# 3D point list with one line of data per point:\n");
    s.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for p in points {
        write!(
            s,
            "{} {} {} {} {} {} {} {}",
            p.id, p.xyz.x, p.xyz.y, p.xyz.z, p.rgb[0], p.rgb[1], p.rgb[2], p.error
        )
        .unwrap();
        for (img, idx) in &p.track {
            write!(s, " {img} {idx}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn write_colmap_images(images: &BTreeMap<u32, ColmapImage>) -> String {
    let mut s = String::from("# Image list with two lines of data per image:\n");
    s.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    s.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for img in images.values() {
        let q = img.pose.quaternion();
        let t = img.pose.translation();
        writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {}",
            img.id, q.w, q.i, q.j, q.k, t.x, t.y, t.z, img.camera_id, img.name
        )
        .unwrap();
        let obs: Vec<String> = img
            .observations
            .iter()
            .map(|(x, y, id)| format!("{x} {y} {id}"))
            .collect();
        s.push_str(&obs.join(" "));
        s.push('\n');
    }
    s
}
