//! Point clouds as binary little-endian PLY with `double` properties: `x y z` and
//! optionally `red green blue` in `[0, 1]`. The cloud's frame is kept in a comment.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CloudFrame, PointCloud};

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let frame = match cloud.frame {
        CloudFrame::Camera => "camera",
        CloudFrame::World => "world",
    };
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment frame {frame}\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        header.push_str("property double red\nproperty double green\nproperty double blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in cloud.positions.iter().enumerate() {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(c) = &cloud.colors {
            for v in c[i] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format(0, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format(0, "header is not ASCII"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::format(0, "expected ply magic"));
    }
    let mut frame = CloudFrame::World;
    let mut count = None;
    let mut props = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", f, ..] => return Err(Error::format(0, format!("unsupported format {f}"))),
            ["comment", "frame", "camera"] => frame = CloudFrame::Camera,
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::format(0, "bad vertex count"))?)
            }
            ["property", "double", name] => props.push(name.to_string()),
            _ => return Err(Error::format(0, format!("unsupported header line {line:?}"))),
        }
    }
    let n = count.ok_or_else(|| Error::format(0, "missing vertex element"))?;
    let has_color = match props.join(" ").as_str() {
        "x y z" => false,
        "x y z red green blue" => true,
        other => return Err(Error::format(0, format!("unsupported properties {other}"))),
    };
    let stride = if has_color { 48 } else { 24 };
    let body = &bytes[end + END.len()..];
    if n.checked_mul(stride) != Some(body.len()) {
        return Err(Error::format(
            end + END.len(),
            "vertex data length does not match count",
        ));
    }
    let f = |i: usize| f64::from_le_bytes(body[i..i + 8].try_into().unwrap());
    let positions = (0..n)
        .map(|k| Vector3::new(f(k * stride), f(k * stride + 8), f(k * stride + 16)))
        .collect();
    let colors = has_color.then(|| {
        (0..n)
            .map(|k| [f(k * stride + 24), f(k * stride + 32), f(k * stride + 40)])
            .collect()
    });
    PointCloud::new(positions, colors, frame)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    decode_ply(&super::read_bytes(path)?)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    super::write_bytes(path, &encode_ply(cloud))
}
