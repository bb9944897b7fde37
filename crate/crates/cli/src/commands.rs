use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use scenecam::diffusion::{
    initial_noise, masked_statistics, sample_with_shaping, shaped_step_count, threshold_sweep, uniform_steps,
    Conditioning, Denoiser, LatentVideo, NoisePredictor, NoiseSchedule, PullOracle, ShapingConfig, TrueNoiseOracle,
    DEFAULT_PULL_STRENGTH,
};
use scenecam::geometry::{canonicalize, interpolate_keyframes, unproject, Trajectory};
use scenecam::io;
use scenecam::metrics::{aggregate, evaluate, EvalMode, MetricReport, TrajectoryPair};
use scenecam::raster::Mask;
use scenecam::renderer::{render_preview, shaping_mask, DEFAULT_RADIUS};
use scenecam::{Error, Result};

use crate::dataset;

#[derive(Debug, Parser)]
#[command(name = "scenecam", version, about = "Metric-scale camera control toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lift an RGB-D view to a point cloud.
    Reconstruct(ReconstructArgs),
    /// Estimate per-clip metric scale over a dataset tree.
    Align(AlignArgs),
    /// Interpolate camera keyframes.
    Interp(InterpArgs),
    /// Render preview frames and shaping masks along a trajectory.
    Preview(PreviewArgs),
    /// Sample with scene-constrained noise shaping.
    Shape(ShapeArgs),
    /// Sample once per shaping threshold and tabulate adherence.
    Sweep(SweepArgs),
    /// Compare generated and ground-truth camera trajectories.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// `.pfm` or 16-bit millimeter `.png`.
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long)]
    pub out_cloud: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// `{clip}/points3D.txt` and `{clip}/images.txt` per clip.
    #[arg(long)]
    pub colmap_dir: PathBuf,
    /// `{clip}/{image stem}.pfm` (or `.png`) per frame.
    #[arg(long)]
    pub depths_dir: PathBuf,
    /// `{clip}.txt` camera files.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
    /// Where metric-scale trajectories of accepted clips are written.
    #[arg(long)]
    pub out_poses: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub quantile: f64,
    /// Metric depths beyond this many meters are ignored.
    #[arg(long, default_value_t = 20.0)]
    pub max_depth: f64,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub keyframes: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Defaults to `--out-dir`.
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserKind {
    /// Predicts the exact noise with the preview as the clean video.
    Oracle,
    /// Pulls clean estimates halfway toward the preview.
    Pull,
    /// Treats the whole latent as noise.
    Noise,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub preview_dir: PathBuf,
    /// Defaults to `--preview-dir`.
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DenoiserKind::Pull)]
    pub denoiser: DenoiserKind,
    /// Recorded with the outputs.
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 900)]
    pub tns: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [600, 800, 900, 1000])]
    pub tns: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Relative,
    Metric,
    Both,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Relative => EvalMode::Relative,
            ModeArg::Metric => EvalMode::Metric,
            ModeArg::Both => EvalMode::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "trials_dir")]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub gen: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// `{sample}/gt.json` plus one generated trajectory per other `{sample}/*.json`.
    #[arg(long)]
    pub trials_dir: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-trial CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Falls back to `$SCENECAM_DATA_DIR`, then `./scenecam-data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

pub const DATA_DIR_ENV: &str = "SCENECAM_DATA_DIR";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Align(a) => align(&a),
        Command::Interp(a) => interp(&a),
        Command::Preview(a) => preview(&a),
        Command::Shape(a) => shape(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let image = io::read_color_png(&a.image)?;
    let depth = io::read_depth(&a.depth)?;
    let k = io::read_intrinsics(&a.intrinsics)?;
    let cloud = unproject(&depth, &k, Some(&image))?;
    info!("{} points from {}x{} view", cloud.len(), k.width, k.height);
    io::write_ply(&a.out_cloud, &cloud)
}

fn align(a: &AlignArgs) -> Result<()> {
    let cfg = scenecam::scale_align::AlignConfig { max_depth: a.max_depth };
    let out = dataset::align_dataset(&a.colmap_dir, &a.depths_dir, &a.poses, &cfg, a.quantile)?;
    let records: Vec<_> = out
        .alignments
        .iter()
        .map(scenecam::scale_align::AlignmentRecord::from)
        .collect();
    io::write_json(&a.out_report, &records)?;
    let accepted = records.iter().filter(|r| r.accepted).count();
    info!("{accepted}/{} clips accepted", records.len());
    if let Some(dir) = &a.out_poses {
        for (id, traj) in &out.metric_trajectories {
            io::write_trajectory(&dir.join(format!("{id}.json")), traj)?;
        }
    }
    Ok(())
}

/// Reads any trajectory file and returns it as canonical camera-to-world.
pub fn canonical_c2w(path: &Path) -> Result<Trajectory> {
    canonicalize(&io::read_trajectory(path)?.to_camera_to_world())
}

fn interp(a: &InterpArgs) -> Result<()> {
    let keys = canonical_c2w(&a.keyframes)?;
    let traj = interpolate_keyframes(&keys, a.frames)?;
    io::write_trajectory(&a.out, &traj)
}

pub fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.png")
}

pub fn mask_file(i: usize) -> String {
    format!("mask_{i:04}.pbm")
}

fn preview(a: &PreviewArgs) -> Result<()> {
    let cloud = io::read_ply(&a.cloud)?;
    let k = io::read_intrinsics(&a.intrinsics)?;
    let traj = io::read_trajectory(&a.traj)?.to_world_to_camera();
    let frames = render_preview(&cloud, &traj, &k, a.radius);
    let masks_dir = a.masks_dir.as_ref().unwrap_or(&a.out_dir);
    for (i, f) in frames.iter().enumerate() {
        io::write_color_png(&a.out_dir.join(frame_file(i)), &f.color)?;
        let m = shaping_mask(f, a.kernel)?;
        io::write_pbm(&masks_dir.join(mask_file(i)), &m.mask)?;
    }
    info!("rendered {} frames", frames.len());
    Ok(())
}

fn numbered_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(ext))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Preview latents, masks and the chosen denoiser for a sampler run.
pub struct SamplerInputs {
    pub preview: LatentVideo,
    pub masks: Vec<Mask>,
    pub denoiser: Box<dyn Denoiser>,
    pub steps: Vec<usize>,
}

pub fn make_denoiser(kind: DenoiserKind, preview: &LatentVideo) -> Result<Box<dyn Denoiser>> {
    Ok(match kind {
        DenoiserKind::Oracle => Box::new(TrueNoiseOracle { clean: preview.clone() }),
        DenoiserKind::Pull => Box::new(PullOracle::new(preview.clone(), DEFAULT_PULL_STRENGTH)?),
        DenoiserKind::Noise => Box::new(NoisePredictor),
    })
}

fn load_sampler_inputs(a: &SamplerArgs, schedule: &NoiseSchedule) -> Result<SamplerInputs> {
    let frames = numbered_files(&a.preview_dir, "frame_", ".png")?
        .iter()
        .map(|p| io::read_color_png(p))
        .collect::<Result<Vec<_>>>()?;
    let masks_dir = a.masks_dir.as_ref().unwrap_or(&a.preview_dir);
    let masks = numbered_files(masks_dir, "mask_", ".pbm")?
        .iter()
        .map(|p| io::read_pbm(p))
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frame_*.png preview frames"));
    }
    if frames.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} preview frames but {} masks",
            frames.len(),
            masks.len()
        )));
    }
    let preview = LatentVideo::from_colors(&frames)?;
    Ok(SamplerInputs {
        denoiser: make_denoiser(a.denoiser, &preview)?,
        steps: uniform_steps(schedule.num_steps(), a.steps)?,
        preview,
        masks,
    })
}

#[derive(serde::Serialize)]
struct ShapeSummary {
    t_ns: usize,
    steps: usize,
    shaped_steps: usize,
    seed: u64,
    kernel: usize,
    denoiser: String,
    frames: usize,
    masked_rmse: f64,
    unmasked_variance: f64,
}

fn shape(a: &ShapeArgs) -> Result<()> {
    let schedule = NoiseSchedule::default();
    if a.tns > schedule.num_steps() {
        return Err(Error::InvalidInput(format!(
            "--tns {} above {}",
            a.tns,
            schedule.num_steps()
        )));
    }
    let s = &a.sampler;
    let inputs = load_sampler_inputs(s, &schedule)?;
    let cfg = ShapingConfig::new(inputs.preview, inputs.masks, a.tns, s.kernel, s.seed)?;
    let init = initial_noise(s.seed, cfg.preview.shape());
    let out = sample_with_shaping(
        inputs.denoiser.as_ref(),
        &cfg,
        &schedule,
        &inputs.steps,
        &init,
        &Conditioning::default(),
    )?;
    let (masked_rmse, unmasked_variance) = masked_statistics(&out, &cfg.preview, &cfg.masks)?;
    for (i, c) in out.to_colors()?.iter().enumerate() {
        io::write_color_png(&a.out.join(frame_file(i)), c)?;
    }
    let summary = ShapeSummary {
        t_ns: a.tns,
        steps: s.steps,
        shaped_steps: shaped_step_count(&inputs.steps, a.tns),
        seed: s.seed,
        kernel: s.kernel,
        denoiser: format!("{:?}", s.denoiser).to_lowercase(),
        frames: out.frames(),
        masked_rmse,
        unmasked_variance,
    };
    io::write_json(&a.out.join("summary.json"), &summary)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let schedule = NoiseSchedule::default();
    let s = &a.sampler;
    let inputs = load_sampler_inputs(s, &schedule)?;
    let cfg = ShapingConfig::new(inputs.preview, inputs.masks, 0, s.kernel, s.seed)?;
    let rows = threshold_sweep(inputs.denoiser.as_ref(), &cfg, &schedule, &inputs.steps, &a.tns)?;
    let csv = io::sweep_csv(&rows)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&a.out, csv)?;
    Ok(())
}

#[derive(serde::Serialize)]
#[serde(untagged)]
enum EvalOutput {
    Single(MetricReport),
    Aggregate(scenecam::metrics::AggregateReport),
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mode = EvalMode::from(a.mode);
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    let output = if let Some(dir) = &a.trials_dir {
        let mut trials: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
        let mut samples: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        samples.sort();
        for sample in samples {
            let id = sample.file_name().unwrap().to_string_lossy().into_owned();
            let gt = canonical_c2w(&sample.join("gt.json"))?;
            let entry = trials.entry(id.clone()).or_default();
            for trial in numbered_files(&sample, "", ".json")? {
                if trial.file_name().is_some_and(|n| n == "gt.json") {
                    continue;
                }
                let name = format!("{id}/{}", trial.file_stem().unwrap().to_string_lossy());
                let result = canonical_c2w(&trial)
                    .and_then(|gen| TrajectoryPair::new(gt.clone(), gen))
                    .and_then(|pair| evaluate(&pair, mode));
                match result {
                    Ok(r) => {
                        rows.push((name, r.clone()));
                        entry.push(r);
                    }
                    Err(e) => warn!("trial {name} failed: {e}"),
                }
            }
        }
        EvalOutput::Aggregate(aggregate(&trials)?)
    } else {
        let gt = canonical_c2w(a.gt.as_ref().expect("clap enforces --gt"))?;
        let gen_path = a
            .gen
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("--gen is required without --trials-dir".into()))?;
        let gen = canonical_c2w(gen_path)?;
        let r = evaluate(&TrajectoryPair::new(gt, gen)?, mode)?;
        rows.push(("gen".into(), r.clone()));
        EvalOutput::Single(r)
    };
    io::write_json(&a.out, &output)?;
    if let Some(csv) = &a.csv {
        if let Some(parent) = csv.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(csv, io::metric_csv(&rows)?)?;
    }
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let data_dir = a
        .data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("scenecam-data"));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(&a.host, a.port, data_dir))
}
