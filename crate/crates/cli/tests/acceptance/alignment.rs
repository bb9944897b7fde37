//! Scale recovery on synthetic clips and rank-extreme rejection by the quantile filter.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenecam::scale_align::{align_clip, filter_clips, AlignConfig, ScaleAlignment};
use scenecam::synthetic::{alignment_clip, ClipSpec};

use crate::{ensure, Outcome};

/// Known scale factors log-uniform in [0.1, 10].
fn alphas(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..=1.0))).collect()
}

/// Rasters hold `alpha · d` for up to 10 × 8 m, so the depth ceiling is lifted.
fn cfg() -> AlignConfig {
    AlignConfig {
        max_depth: f64::INFINITY,
    }
}

fn recovery(corruption: f64, tol: f64, seed: u64) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    let mut corrupted = 0;
    let mut total = 0;
    for (i, alpha) in alphas(20, seed).into_iter().enumerate() {
        let layout = ClipSpec {
            corruption,
            ..ClipSpec::default()
        };
        let clip = alignment_clip(&format!("clip_{i:02}"), alpha, seed * 1000 + i as u64, layout)
            .map_err(|e| e.to_string())?;
        let a = align_clip(
            &clip.clip_id,
            &clip.points,
            &clip.depths,
            &clip.k,
            &clip.traj_w2c,
            &cfg(),
        )
        .map_err(|e| format!("{}: {e}", clip.clip_id))?;
        let rel = (a.clip_alpha - alpha).abs() / alpha;
        worst = worst.max(rel);
        corrupted += clip.corrupted_observations;
        total += clip.total_observations;
    }
    ensure(worst <= tol, || {
        format!("relative scale error {worst:e} > {tol:e} at corruption {corruption}")
    })?;
    Ok(format!(
        "20 clips, {corrupted}/{total} corrupted obs, max rel err {worst:.1e} (tol {tol:.0e})"
    ))
}

fn alignment(id: usize, max: f64, min: f64) -> ScaleAlignment {
    ScaleAlignment {
        clip_id: format!("clip_{id:03}"),
        per_frame_factors: BTreeMap::new(),
        frame_medians: BTreeMap::new(),
        clip_alpha: (max * min).sqrt(),
        max_frame_factor: max,
        min_frame_factor: min,
        accepted: true,
        rejection_reason: None,
    }
}

/// Indices holding the `k` smallest and `k` largest values.
fn rank_extremes(values: &[f64], k: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap());
    idx[..k].iter().chain(&idx[values.len() - k..]).copied().collect()
}

fn rejected(out: &[ScaleAlignment]) -> BTreeSet<usize> {
    out.iter()
        .enumerate()
        .filter(|(_, a)| !a.accepted)
        .map(|(i, _)| i)
        .collect()
}

fn filter_rank_extremes() -> Result<String, String> {
    // Population 1: 100 aligned synthetic clips with distinct scales.
    let clips: Vec<ScaleAlignment> = alphas(100, 77)
        .into_iter()
        .enumerate()
        .map(|(i, alpha)| {
            let layout = ClipSpec {
                frames: 3,
                points: 40,
                ..ClipSpec::default()
            };
            let c =
                alignment_clip(&format!("clip_{i:03}"), alpha, 5000 + i as u64, layout).map_err(|e| e.to_string())?;
            align_clip(&c.clip_id, &c.points, &c.depths, &c.k, &c.traj_w2c, &cfg()).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let maxes: Vec<f64> = clips.iter().map(|a| a.max_frame_factor).collect();
    let mins: Vec<f64> = clips.iter().map(|a| a.min_frame_factor).collect();
    let want: BTreeSet<usize> = rank_extremes(&maxes, 2)
        .union(&rank_extremes(&mins, 2))
        .copied()
        .collect();
    let got = rejected(&filter_clips(clips, 0.02).map_err(|e| e.to_string())?);
    ensure(got == want, || {
        format!("aligned population: rejected {got:?}, expected {want:?}")
    })?;

    // Population 2: independent max and min factor rankings.
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut max_rank: Vec<usize> = (0..100).collect();
    let mut min_rank: Vec<usize> = (0..100).collect();
    max_rank.shuffle(&mut rng);
    min_rank.shuffle(&mut rng);
    let pop: Vec<ScaleAlignment> = (0..100)
        .map(|i| alignment(i, 2.0 + max_rank[i] as f64 * 0.1, 0.1 + min_rank[i] as f64 * 0.01))
        .collect();
    let maxes: Vec<f64> = pop.iter().map(|a| a.max_frame_factor).collect();
    let mins: Vec<f64> = pop.iter().map(|a| a.min_frame_factor).collect();
    let want2: BTreeSet<usize> = rank_extremes(&maxes, 2)
        .union(&rank_extremes(&mins, 2))
        .copied()
        .collect();
    let out = filter_clips(pop, 0.02).map_err(|e| e.to_string())?;
    let got2 = rejected(&out);
    ensure(got2 == want2, || {
        format!("independent population: rejected {got2:?}, expected {want2:?}")
    })?;
    ensure(
        out.iter().enumerate().all(|(i, a)| a.clip_id == format!("clip_{i:03}")),
        || "order not preserved".into(),
    )?;
    Ok(format!(
        "filter q=0.02 rejected exactly the rank extremes ({} and {} of 100)",
        got.len(),
        got2.len()
    ))
}

pub fn run() -> Outcome {
    let parts = [
        recovery(0.0, 1e-6, 1)?,
        recovery(0.1, 1e-3, 2)?,
        filter_rank_extremes()?,
    ];
    Ok(parts.join("; "))
}
