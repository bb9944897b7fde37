//! 8-bit RGB color images and 16-bit millimeter depth images.

use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{Error, Result};
use crate::raster::{ColorRaster, DepthRaster};

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format(0, format!("png: {e}"))
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8], transform: Transformations) -> Result<Decoded> {
    let mut decoder = Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(transform);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(0, "png: image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(png_err)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

/// Decodes to channels `v / 255`. Palette and low-bit images are expanded; alpha is
/// dropped.
pub fn decode_color_png(bytes: &[u8]) -> Result<ColorRaster> {
    let img = decode(bytes, Transformations::EXPAND | Transformations::STRIP_16)?;
    if img.depth != BitDepth::Eight {
        return Err(Error::format(0, format!("unsupported bit depth {:?}", img.depth)));
    }
    let channels = match img.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::format(0, "unexpanded palette image")),
    };
    let px = img
        .data
        .chunks_exact(channels)
        .map(|c| {
            let f = |v: u8| v as f64 / 255.0;
            if channels < 3 {
                [f(c[0]); 3]
            } else {
                [f(c[0]), f(c[1]), f(c[2])]
            }
        })
        .collect();
    ColorRaster::new(img.width, img.height, px)
}

/// Encodes as 8-bit RGB with `round(c · 255)`.
pub fn encode_color_png(c: &ColorRaster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out, c.width() as u32, c.height() as u32);
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    let data: Vec<u8> = c.pixels().iter().flatten().map(|v| (v * 255.0).round() as u8).collect();
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&data).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(out)
}

/// Decodes a 16-bit grayscale image of millimeters to meters. Zero stays zero (invalid).
pub fn decode_depth_png16(bytes: &[u8]) -> Result<DepthRaster> {
    let img = decode(bytes, Transformations::IDENTITY)?;
    if img.color != ColorType::Grayscale || img.depth != BitDepth::Sixteen {
        return Err(Error::format(
            0,
            format!(
                "depth png must be 16-bit grayscale, got {:?} {:?}",
                img.color, img.depth
            ),
        ));
    }
    let values = img
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 1000.0)
        .collect();
    DepthRaster::new(img.width, img.height, values)
}

/// Encodes meters as 16-bit millimeters; invalid or out-of-range depths become zero.
pub fn encode_depth_png16(d: &DepthRaster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = Encoder::new(&mut out, d.width() as u32, d.height() as u32);
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Sixteen);
    let data: Vec<u8> = d
        .values()
        .iter()
        .flat_map(|&v| {
            let mm = (v as f64 * 1000.0).round();
            let mm = if v.is_finite() && (0.0..=u16::MAX as f64).contains(&mm) {
                mm as u16
            } else {
                0
            };
            mm.to_be_bytes()
        })
        .collect();
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&data).map_err(png_err)?;
    w.finish().map_err(png_err)?;
    Ok(out)
}

pub fn read_color_png(path: &Path) -> Result<ColorRaster> {
    decode_color_png(&super::read_bytes(path)?)
}

pub fn write_color_png(path: &Path, c: &ColorRaster) -> Result<()> {
    super::write_bytes(path, &encode_color_png(c)?)
}

pub fn write_depth_png16(path: &Path, d: &DepthRaster) -> Result<()> {
    super::write_bytes(path, &encode_depth_png16(d)?)
}

/// Reads a depth raster from `.pfm` or 16-bit millimeter `.png`.
pub fn read_depth(path: &Path) -> Result<DepthRaster> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pfm" => super::read_pfm(path),
        "png" => decode_depth_png16(&super::read_bytes(path)?),
        _ => Err(Error::InvalidInput(format!(
            "unsupported depth format {}",
            path.display()
        ))),
    }
}
