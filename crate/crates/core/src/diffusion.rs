//! Noise schedule, forward noising, a deterministic sampler with a pluggable
//! denoiser, and scene-constrained noise shaping.
//!
//! Latents are pixel rasters (identity encoder): a color `c ∈ [0, 1]` maps to
//! `2c − 1`. Masked elements are overwritten at high noise levels with a freshly
//! renoised copy of the preview, `α_t · preview + σ_t · ε`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ColorRaster, Mask};
use crate::renderer::RenderedFrame;

pub const DEFAULT_NUM_STEPS: usize = 1000;
pub const DEFAULT_T_NS: usize = 900;
pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

/// Steps whose `α_t` falls below this cannot be inverted for `ẑ₀`.
pub const ALPHA_FLOOR: f64 = 1e-6;

/// Stream tag reserved for the initial noise, outside the step range.
const INIT_STREAM_TAG: u64 = 0xFFFF_FFFF;

/// `ᾱ_t` table with `ᾱ_0 = 1`, plus derived `α_t = √ᾱ_t` and `σ_t = √(1 − ᾱ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    sigma_sq: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` to `beta_end` over `num_steps`, `ᾱ_t = Π_{s≤t} (1 − β_s)`.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::InvalidInput("schedule needs at least one step".into()));
        }
        let mut alpha_bar = Vec::with_capacity(num_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..num_steps {
            let beta = if num_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    /// Accepts any strictly decreasing table in `(0, 1]` starting at 1.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidInput("alpha_bar needs at least two entries".into()));
        }
        if (alpha_bar[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "alpha_bar[0] must be 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0] && w[1] > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "alpha_bar must be strictly decreasing in (0, 1]; violated at step {}",
                    t + 1
                )));
            }
        }
        let sigma_sq: Vec<f64> = alpha_bar.iter().map(|a| 1.0 - a).collect();
        let alpha = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let sigma = sigma_sq.iter().map(|s| s.sqrt()).collect();
        Ok(Self {
            alpha_bar,
            sigma_sq,
            alpha,
            sigma,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    #[inline]
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    /// `α_t²` as stored, i.e. `ᾱ_t`.
    #[inline]
    pub fn alpha_sq(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `σ_t²` as stored, `1 − ᾱ_t`. `alpha_sq(t) + sigma_sq(t)` rounds to exactly 1.
    #[inline]
    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.sigma_sq[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.num_steps() {
            return Err(Error::InvalidInput(format!(
                "step {t} outside [0, {}]",
                self.num_steps()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_NUM_STEPS, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

/// `F × H × W × C` tensor, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentVideo {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * height * width * channels {
            return Err(Error::Shape(format!(
                "{frames}x{height}x{width}x{channels} latent needs {} values, got {}",
                frames * height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("latent values must be finite".into()));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
            data: vec![0.0; frames * height * width * channels],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    fn same_shape(&self, other: &LatentVideo, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    fn map2(&self, other: &LatentVideo, f: impl Fn(f64, f64) -> f64) -> LatentVideo {
        LatentVideo {
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
            ..*self
        }
    }

    /// Identity encoder: stacks color frames as `2c − 1`, three channels.
    pub fn from_colors(frames: &[ColorRaster]) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyInput("no frames to encode"))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(frames.len() * w * h * 3);
        for c in frames {
            if c.width() != w || c.height() != h {
                return Err(Error::Shape("frames differ in size".into()));
            }
            data.extend(c.pixels().iter().flat_map(|p| p.map(|v| 2.0 * v - 1.0)));
        }
        Self::new(frames.len(), h, w, 3, data)
    }

    /// Inverse of [`LatentVideo::from_colors`], clamping to `[0, 1]`.
    pub fn to_colors(&self) -> Result<Vec<ColorRaster>> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "decoding needs 3 channels, latent has {}",
                self.channels
            )));
        }
        (0..self.frames)
            .map(|f| {
                let px = self
                    .frame(f)
                    .chunks_exact(3)
                    .map(|c| [0, 1, 2].map(|i| ((c[i] + 1.0) / 2.0).clamp(0.0, 1.0)))
                    .collect();
                ColorRaster::new(self.width, self.height, px)
            })
            .collect()
    }
}

/// Standard-normal tensor drawn from the stream keyed by `(seed, t, frame)`; each frame
/// has its own stream so values do not depend on evaluation order.
pub fn seeded_normal(seed: u64, t: u64, shape: [usize; 4]) -> LatentVideo {
    let [frames, height, width, channels] = shape;
    let per = height * width * channels;
    let mut data = Vec::with_capacity(frames * per);
    for f in 0..frames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((t << 32) | f as u64);
        data.extend((0..per).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    }
    LatentVideo {
        frames,
        height,
        width,
        channels,
        data,
    }
}

/// Initial pure noise for a sampling run.
pub fn initial_noise(seed: u64, shape: [usize; 4]) -> LatentVideo {
    seeded_normal(seed, INIT_STREAM_TAG, shape)
}

/// `z_t = α_t z₀ + σ_t ε`.
pub fn add_noise(schedule: &NoiseSchedule, z0: &LatentVideo, t: usize, eps: &LatentVideo) -> Result<LatentVideo> {
    schedule.check_step(t)?;
    z0.same_shape(eps, "add_noise")?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    Ok(z0.map2(eps, |x, e| a * x + s * e))
}

/// Per-frame conditioning passed through to the denoiser.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conditioning {
    /// Frames supplied clean to the model (see [`condition_mask`]).
    pub frame_mask: Vec<bool>,
}

/// Noise predictor called once per sampler step.
pub trait Denoiser: Send + Sync {
    fn predict_noise(
        &self,
        z_t: &LatentVideo,
        t: usize,
        schedule: &NoiseSchedule,
        cond: &Conditioning,
    ) -> Result<LatentVideo>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, z_t: &LatentVideo, t: usize, s: &NoiseSchedule, c: &Conditioning) -> Result<LatentVideo> {
        (**self).predict_noise(z_t, t, s, c)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(&self, z_t: &LatentVideo, t: usize, s: &NoiseSchedule, c: &Conditioning) -> Result<LatentVideo> {
        (**self).predict_noise(z_t, t, s, c)
    }
}

/// Knows the clean latent and returns the exact noise `(z_t − α_t z₀) / σ_t`.
#[derive(Debug, Clone)]
pub struct TrueNoiseOracle {
    pub clean: LatentVideo,
}

impl Denoiser for TrueNoiseOracle {
    fn predict_noise(&self, z_t: &LatentVideo, t: usize, s: &NoiseSchedule, _: &Conditioning) -> Result<LatentVideo> {
        z_t.same_shape(&self.clean, "oracle denoiser")?;
        let (a, sg) = (s.alpha(t), s.sigma(t));
        if sg == 0.0 {
            return Ok(LatentVideo::zeros(z_t.frames, z_t.height, z_t.width, z_t.channels));
        }
        Ok(z_t.map2(&self.clean, |z, x| (z - a * x) / sg))
    }
}

/// Predicts `ẑ₀ = target + (1 − strength) · (z_t / α_t − target)` and returns the matching
/// noise. `strength = 1` always predicts the target; `strength = 0` trusts the input.
#[derive(Debug, Clone)]
pub struct PullOracle {
    pub target: LatentVideo,
    pub strength: f64,
}

pub const DEFAULT_PULL_STRENGTH: f64 = 0.5;

impl PullOracle {
    pub fn new(target: LatentVideo, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::InvalidInput(format!("pull strength {strength} outside [0, 1]")));
        }
        Ok(Self { target, strength })
    }

    pub fn predict_clean(&self, z_t: &LatentVideo, t: usize, s: &NoiseSchedule) -> LatentVideo {
        let a = s.alpha(t);
        let keep = 1.0 - self.strength;
        z_t.map2(&self.target, |z, p| p + keep * (z / a - p))
    }
}

impl Denoiser for PullOracle {
    fn predict_noise(&self, z_t: &LatentVideo, t: usize, s: &NoiseSchedule, _: &Conditioning) -> Result<LatentVideo> {
        z_t.same_shape(&self.target, "pull denoiser")?;
        let (a, sg) = (s.alpha(t), s.sigma(t));
        if sg == 0.0 {
            return Ok(LatentVideo::zeros(z_t.frames, z_t.height, z_t.width, z_t.channels));
        }
        let x0 = self.predict_clean(z_t, t, s);
        Ok(z_t.map2(&x0, |z, x| (z - a * x) / sg))
    }
}

/// Degenerate control: claims the whole input is noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoisePredictor;

impl Denoiser for NoisePredictor {
    fn predict_noise(&self, z_t: &LatentVideo, _: usize, _: &NoiseSchedule, _: &Conditioning) -> Result<LatentVideo> {
        Ok(z_t.clone())
    }
}

/// Deterministic update: `ẑ₀ = (z_t − σ_t ε̂) / α_t`, `z_{t'} = α_{t'} ẑ₀ + σ_{t'} ε̂`.
pub fn ddim_update(
    schedule: &NoiseSchedule,
    z_t: &LatentVideo,
    eps_hat: &LatentVideo,
    t: usize,
    t_prev: usize,
) -> Result<LatentVideo> {
    schedule.check_step(t)?;
    if t_prev >= t {
        return Err(Error::InvalidInput(format!(
            "sampler steps must descend (t={t}, t_prev={t_prev})"
        )));
    }
    z_t.same_shape(eps_hat, "sampler step")?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    if a < ALPHA_FLOOR {
        return Err(Error::NumericalFloor { t, alpha: a });
    }
    let (ap, sp) = (schedule.alpha(t_prev), schedule.sigma(t_prev));
    Ok(z_t.map2(eps_hat, |z, e| {
        let x0 = (z - s * e) / a;
        ap * x0 + sp * e
    }))
}

pub fn sampler_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    z_t: &LatentVideo,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    cond: &Conditioning,
) -> Result<LatentVideo> {
    let eps_hat = denoiser.predict_noise(z_t, t, schedule, cond)?;
    ddim_update(schedule, z_t, &eps_hat, t, t_prev)
}

/// Preview latents and masks that constrain sampling above `t_ns`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingConfig {
    pub t_ns: usize,
    pub kernel: usize,
    pub preview: LatentVideo,
    pub masks: Vec<Mask>,
    pub rng_seed: u64,
}

impl ShapingConfig {
    pub fn new(preview: LatentVideo, masks: Vec<Mask>, t_ns: usize, kernel: usize, rng_seed: u64) -> Result<Self> {
        let [f, h, w, _] = preview.shape();
        if masks.len() != f {
            return Err(Error::Shape(format!("{} masks for {f} preview frames", masks.len())));
        }
        if masks.iter().any(|m| m.width() != w || m.height() != h) {
            return Err(Error::Shape(format!("masks must be {w}x{h}")));
        }
        Ok(Self {
            t_ns,
            kernel,
            preview,
            masks,
            rng_seed,
        })
    }

    pub fn from_frames(
        frames: &[RenderedFrame],
        masks: Vec<Mask>,
        t_ns: usize,
        kernel: usize,
        rng_seed: u64,
    ) -> Result<Self> {
        let colors: Vec<_> = frames.iter().map(|f| f.color.clone()).collect();
        Self::new(LatentVideo::from_colors(&colors)?, masks, t_ns, kernel, rng_seed)
    }

    pub fn with_threshold(&self, t_ns: usize) -> Self {
        Self { t_ns, ..self.clone() }
    }
}

/// Overwrites masked elements with `α_t · preview + σ_t · ε`; leaves the rest untouched.
pub fn shape_latent(
    schedule: &NoiseSchedule,
    z_t: &LatentVideo,
    cfg: &ShapingConfig,
    t: usize,
    fresh_eps: &LatentVideo,
) -> Result<LatentVideo> {
    schedule.check_step(t)?;
    if t <= cfg.t_ns {
        return Err(Error::InvalidInput(format!(
            "shaping applies only above t_ns={} (got t={t})",
            cfg.t_ns
        )));
    }
    if cfg.masks.len() != z_t.frames {
        return Err(Error::Shape(format!(
            "{} masks for {} latent frames",
            cfg.masks.len(),
            z_t.frames
        )));
    }
    z_t.same_shape(&cfg.preview, "preview")?;
    z_t.same_shape(fresh_eps, "fresh noise")?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let c = z_t.channels;
    let mut out = z_t.clone();
    let n = z_t.frame_len();
    for (f, mask) in cfg.masks.iter().enumerate() {
        for (p, _) in mask.bits().iter().enumerate().filter(|(_, b)| **b) {
            for ch in 0..c {
                let i = f * n + p * c + ch;
                out.data[i] = a * cfg.preview.data[i] + s * fresh_eps.data[i];
            }
        }
    }
    Ok(out)
}

/// `[T, …, 0]` with `n` evenly spaced (rounded) intervals.
pub fn uniform_steps(num_steps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > num_steps {
        return Err(Error::InvalidInput(format!(
            "cannot split {num_steps} steps into {n} intervals"
        )));
    }
    Ok((0..=n)
        .map(|i| ((num_steps * (n - i)) as f64 / n as f64).round() as usize)
        .collect())
}

fn check_step_list(steps: &[usize], schedule: &NoiseSchedule) -> Result<()> {
    if steps.len() < 2 || *steps.last().unwrap() != 0 {
        return Err(Error::InvalidInput(
            "step list needs at least two entries and must end at 0".into(),
        ));
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("step list must be strictly descending".into()));
    }
    schedule.check_step(steps[0])
}

/// Runs the deterministic sampler from `init`, shaping before each step with `t > t_ns`.
/// Returns the final clean estimate.
pub fn sample_with_shaping<D: Denoiser + ?Sized>(
    denoiser: &D,
    cfg: &ShapingConfig,
    schedule: &NoiseSchedule,
    steps: &[usize],
    init: &LatentVideo,
    cond: &Conditioning,
) -> Result<LatentVideo> {
    check_step_list(steps, schedule)?;
    let mut z = init.clone();
    for w in steps.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        if t > cfg.t_ns {
            let eps = seeded_normal(cfg.rng_seed, t as u64, z.shape());
            z = shape_latent(schedule, &z, cfg, t, &eps)?;
        }
        z = sampler_step(denoiser, &z, t, t_prev, schedule, cond)?;
    }
    Ok(z)
}

/// Number of sampler steps that `sample_with_shaping` shapes.
pub fn shaped_step_count(steps: &[usize], t_ns: usize) -> usize {
    steps
        .iter()
        .take(steps.len().saturating_sub(1))
        .filter(|t| **t > t_ns)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Basic,
    Interpolation,
    Continuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionMode {
    pub kind: ConditionKind,
    pub index: usize,
}

/// Which frames are supplied clean: basic → frame `i`; interpolation → `i` and `F−1`;
/// continuation → frames `0..=i`.
pub fn condition_mask(mode: ConditionMode, frames: usize) -> Result<Vec<bool>> {
    if mode.index >= frames {
        return Err(Error::InvalidInput(format!(
            "condition frame {} out of range for {frames} frames",
            mode.index
        )));
    }
    if mode.kind == ConditionKind::Interpolation && frames < 2 {
        return Err(Error::InvalidInput("interpolation needs at least 2 frames".into()));
    }
    Ok((0..frames)
        .map(|f| match mode.kind {
            ConditionKind::Basic => f == mode.index,
            ConditionKind::Interpolation => f == mode.index || f == frames - 1,
            ConditionKind::Continuation => f <= mode.index,
        })
        .collect())
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_ns: usize,
    pub masked_rmse: f64,
    pub unmasked_variance: f64,
    pub seed: u64,
    pub steps: usize,
}

/// RMSE to the preview over masked elements, and population variance over the rest.
pub fn masked_statistics(out: &LatentVideo, preview: &LatentVideo, masks: &[Mask]) -> Result<(f64, f64)> {
    out.same_shape(preview, "statistics")?;
    if masks.len() != out.frames {
        return Err(Error::Shape("mask count differs from frame count".into()));
    }
    let c = out.channels;
    let n = out.frame_len();
    let (mut se, mut n_masked) = (0.0, 0usize);
    let mut unmasked = Vec::new();
    for (f, mask) in masks.iter().enumerate() {
        for (p, selected) in mask.bits().iter().enumerate() {
            for ch in 0..c {
                let i = f * n + p * c + ch;
                if *selected {
                    se += (out.data[i] - preview.data[i]).powi(2);
                    n_masked += 1;
                } else {
                    unmasked.push(out.data[i]);
                }
            }
        }
    }
    let rmse = if n_masked == 0 {
        0.0
    } else {
        (se / n_masked as f64).sqrt()
    };
    let var = if unmasked.is_empty() {
        0.0
    } else {
        let mean = unmasked.iter().sum::<f64>() / unmasked.len() as f64;
        unmasked.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / unmasked.len() as f64
    };
    Ok((rmse, var))
}

/// Samples once per threshold with the same seed and initial noise.
pub fn threshold_sweep<D: Denoiser + ?Sized>(
    denoiser: &D,
    cfg_base: &ShapingConfig,
    schedule: &NoiseSchedule,
    steps: &[usize],
    thresholds: &[usize],
) -> Result<Vec<SweepRow>> {
    let init = initial_noise(cfg_base.rng_seed, cfg_base.preview.shape());
    let cond = Conditioning::default();
    thresholds
        .iter()
        .map(|&t_ns| {
            if t_ns > schedule.num_steps() {
                return Err(Error::InvalidInput(format!(
                    "threshold {t_ns} above {} steps",
                    schedule.num_steps()
                )));
            }
            let cfg = cfg_base.with_threshold(t_ns);
            let out = sample_with_shaping(denoiser, &cfg, schedule, steps, &init, &cond)?;
            let (masked_rmse, unmasked_variance) = masked_statistics(&out, &cfg.preview, &cfg.masks)?;
            Ok(SweepRow {
                t_ns,
                masked_rmse,
                unmasked_variance,
                seed: cfg.rng_seed,
                steps: steps.len() - 1,
            })
        })
        .collect()
}
