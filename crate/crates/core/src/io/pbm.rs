//! Binary bitmaps (`P4`). Rows are packed MSB-first and padded to whole bytes; a set bit
//! marks a selected pixel.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Mask;

pub fn encode_pbm(m: &Mask) -> Vec<u8> {
    let (w, h) = (m.width(), m.height());
    let stride = w.div_ceil(8);
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let header = out.len();
    out.resize(header + stride * h, 0);
    for v in 0..h {
        for u in 0..w {
            if m.get(u, v) {
                out[header + v * stride + u / 8] |= 0x80 >> (u % 8);
            }
        }
    }
    out
}

/// Header token, skipping whitespace and `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start, "truncated header"));
    }
    Ok(&bytes[start..*pos])
}

pub fn decode_pbm(bytes: &[u8]) -> Result<Mask> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P4" {
        return Err(Error::format(0, "expected P4 magic"));
    }
    let mut dim = || -> Result<usize> {
        let at = pos;
        std::str::from_utf8(token(bytes, &mut pos)?)
            .ok()
            .and_then(|t| t.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(at, "bad dimension"))
    };
    let (w, h) = (dim()?, dim()?);
    pos += 1;
    let stride = w.div_ceil(8);
    let need = stride
        .checked_mul(h)
        .and_then(|n| n.checked_add(pos))
        .ok_or_else(|| Error::format(pos, "dimensions overflow"))?;
    if bytes.len() != need {
        return Err(Error::format(
            bytes.len().min(need),
            format!(
                "expected {} bytes of bits, found {}",
                stride * h,
                bytes.len().saturating_sub(pos)
            ),
        ));
    }
    let data = &bytes[pos..];
    let bits = (0..h)
        .flat_map(|v| (0..w).map(move |u| data[v * stride + u / 8] & (0x80 >> (u % 8)) != 0))
        .collect();
    Mask::new(w, h, bits)
}

pub fn read_pbm(path: &Path) -> Result<Mask> {
    decode_pbm(&super::read_bytes(path)?)
}

pub fn write_pbm(path: &Path, m: &Mask) -> Result<()> {
    super::write_bytes(path, &encode_pbm(m))
}
