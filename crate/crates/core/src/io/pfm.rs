//! Single-channel Portable Float Map (`Pf`).
//!
//! A negative scale marks little-endian samples. Rows are stored bottom-to-top on disk and
//! flipped to a top-left origin in memory.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::DepthRaster;

/// Splits off one whitespace-terminated header token, skipping leading whitespace.
fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start, "truncated header"));
    }
    let tok = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::format(start, "header is not ASCII"))?
        .to_string();
    Ok(tok)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthRaster> {
    let mut pos = 0;
    match token(bytes, &mut pos)?.as_str() {
        "Pf" => {}
        "PF" => return Err(Error::format(0, "three-channel PFM is not a depth raster")),
        other => return Err(Error::format(0, format!("bad magic {other:?}"))),
    }
    let dim = |pos: &mut usize| -> Result<usize> {
        let at = *pos;
        let t = token(bytes, pos)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(at, format!("bad dimension {t:?}")))
    };
    let width = dim(&mut pos)?;
    let height = dim(&mut pos)?;
    let at = pos;
    let scale: f64 = token(bytes, &mut pos)?
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(at, "bad scale"))?;
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let n = width
        .checked_mul(height)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::format(at, "dimensions overflow"))?;
    let expected = pos.saturating_add(n * 4);
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected),
            format!(
                "expected {} sample bytes, found {}",
                n * 4,
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    let little = scale < 0.0;
    let data = &bytes[pos..];
    let mut values = vec![0f32; n];
    for row in 0..height {
        let dst = height - 1 - row;
        for col in 0..width {
            let i = (row * width + col) * 4;
            let b = [data[i], data[i + 1], data[i + 2], data[i + 3]];
            values[dst * width + col] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    DepthRaster::new(width, height, values)
}

/// Encodes little-endian with scale `-1`. NaN samples are rejected.
pub fn encode_pfm(d: &DepthRaster) -> Result<Vec<u8>> {
    if let Some(i) = d.values().iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!(
            "NaN depth at pixel ({}, {})",
            i % d.width(),
            i / d.width()
        )));
    }
    let (w, h) = (d.width(), d.height());
    let mut out = format!("Pf\n{w} {h}\n-1\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for v in &d.values()[row * w..(row + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: &Path) -> Result<DepthRaster> {
    decode_pfm(&super::read_bytes(path)?)
}

pub fn write_pfm(path: &Path, d: &DepthRaster) -> Result<()> {
    super::write_bytes(path, &encode_pfm(d)?)
}
