//! Self-render identity, z-buffer minimum on coincident points and exhaustive 3×3
//! shaping-mask semantics.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenecam::geometry::{unproject, CameraIntrinsics, CloudFrame, PointCloud, Pose};
use scenecam::raster::{ColorRaster, DepthRaster, Mask};
use scenecam::renderer::{shaping_mask_with, splat, BorderMode, RenderedFrame};

use crate::{ensure, Outcome};

fn self_render() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut valid_px = 0;
    for _ in 0..10 {
        let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
        let k = CameraIntrinsics::new(
            rng.random_range(20.0..120.0),
            rng.random_range(20.0..120.0),
            w as f64 / 2.0 + rng.random_range(-2.0..2.0),
            h as f64 / 2.0 + rng.random_range(-2.0..2.0),
            w,
            h,
        )
        .map_err(|e| e.to_string())?;
        let depth: Vec<f32> = (0..w * h)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => f32::NAN,
                _ => rng.random_range(0.05f32..100.0),
            })
            .collect();
        let d = DepthRaster::new(w, h, depth).map_err(|e| e.to_string())?;
        let colors: Vec<[f64; 3]> = (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let c = ColorRaster::new(w, h, colors).map_err(|e| e.to_string())?;
        let cloud = unproject(&d, &k, Some(&c)).map_err(|e| e.to_string())?;
        let f = splat(&cloud, &Pose::identity(), &k, 0);
        for i in 0..w * h {
            let src = d.values()[i];
            let (u, v) = (i % w, i / w);
            if src.is_finite() && src > 0.0 {
                valid_px += 1;
                ensure(f.depth[i] == src as f64, || {
                    format!("depth differs at ({u},{v}): {} vs {src}", f.depth[i])
                })?;
                ensure(f.color.get(u, v) == c.get(u, v), || {
                    format!("color differs at ({u},{v})")
                })?;
                ensure(f.visibility.get(u, v), || format!("valid pixel ({u},{v}) invisible"))?;
            } else {
                ensure(!f.visibility.get(u, v), || format!("invalid pixel ({u},{v}) visible"))?;
            }
        }
    }
    Ok(format!("self-render exact at {valid_px} valid pixels"))
}

fn zbuffer_minimum() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 9, 9).map_err(|e| e.to_string())?;
    for trial in 0..300 {
        // Many points on the same ray, several at exactly equal depth, in random order.
        let (u, v) = (rng.random_range(0..9) as f64, rng.random_range(0..9) as f64);
        let mut depths: Vec<f64> = (0..rng.random_range(2..12))
            .map(|_| (rng.random_range(1..6) as f64) * 0.5)
            .collect();
        depths.shuffle(&mut rng);
        let positions: Vec<Vector3<f64>> = depths
            .iter()
            .map(|z| Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, *z))
            .collect();
        let colors: Vec<[f64; 3]> = (0..depths.len()).map(|i| [i as f64 / 16.0, 0.0, 0.0]).collect();
        let cloud = PointCloud::new(positions, Some(colors.clone()), CloudFrame::World).map_err(|e| e.to_string())?;
        let radius = trial % 3;
        let f = splat(&cloud, &Pose::identity(), &k, radius);
        let zmin = depths.iter().copied().fold(f64::INFINITY, f64::min);
        // Strict comparison: the first point at the minimum depth wins.
        let first = depths.iter().position(|z| *z == zmin).unwrap();
        let (ui, vi) = (u as usize, v as usize);
        ensure(f.depth[vi * 9 + ui] == zmin, || {
            format!("trial {trial}: depth {} != min {zmin}", f.depth[vi * 9 + ui])
        })?;
        ensure(f.color.get(ui, vi) == colors[first], || {
            format!("trial {trial}: wrong winner among ties")
        })?;
    }
    Ok("z-buffer keeps the nearest (first among ties) on 300 adversarial stacks".into())
}

fn frame_from_bits(w: usize, h: usize, bits: Vec<bool>) -> Result<RenderedFrame, String> {
    let mask = Mask::new(w, h, bits).map_err(|e| e.to_string())?;
    RenderedFrame::from_color_and_visibility(ColorRaster::black(w, h), mask).map_err(|e| e.to_string())
}

/// Brute force: selected iff visible and every in-window pixel is visible; out-of-raster
/// pixels are skipped (clamp) or count as invisible.
fn oracle(bits: &[bool], w: usize, h: usize, u: usize, v: usize, border: BorderMode) -> bool {
    for dv in -1i64..=1 {
        for du in -1i64..=1 {
            let (x, y) = (u as i64 + du, v as i64 + dv);
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                if border == BorderMode::Invisible {
                    return false;
                }
                continue;
            }
            if !bits[y as usize * w + x as usize] {
                return false;
            }
        }
    }
    true
}

fn exhaustive_masks() -> Result<String, String> {
    let mut checked = 0;
    for pattern in 0u32..512 {
        let bits: Vec<bool> = (0..9).map(|i| pattern >> i & 1 == 1).collect();
        for border in [BorderMode::Clamp, BorderMode::Invisible] {
            let f = frame_from_bits(3, 3, bits.clone())?;
            let m = shaping_mask_with(&f, 3, border).map_err(|e| e.to_string())?;
            for v in 0..3 {
                for u in 0..3 {
                    let want = oracle(&bits, 3, 3, u, v, border);
                    ensure(m.mask.get(u, v) == want, || {
                        format!(
                            "pattern {pattern:09b} {border:?} at ({u},{v}): got {}, want {want}",
                            m.mask.get(u, v)
                        )
                    })?;
                    checked += 1;
                }
            }
        }
        // The same window as the interior of a 5×5 frame with a fully visible ring: only
        // the center is fully interior, selected iff all nine bits are set.
        let mut big = vec![true; 25];
        for (i, b) in bits.iter().enumerate() {
            big[(1 + i / 3) * 5 + 1 + i % 3] = *b;
        }
        let m = shaping_mask_with(&frame_from_bits(5, 5, big)?, 3, BorderMode::Clamp).map_err(|e| e.to_string())?;
        ensure(m.mask.get(2, 2) == (pattern == 511), || {
            format!("interior center wrong for {pattern:09b}")
        })?;
        ensure(
            m.mask.is_subset_of(&frame_from_bits(5, 5, vec![true; 25])?.visibility),
            || "mask not within frame".into(),
        )?;
    }
    Ok(format!("all 512 3x3 patterns, {checked} pixel checks"))
}

pub fn run() -> Outcome {
    let parts = [self_render()?, zbuffer_minimum()?, exhaustive_masks()?];
    Ok(parts.join("; "))
}
