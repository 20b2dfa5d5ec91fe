use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fresco_core::correspondence::{load_correspondence, save_correspondence, ClipCorrespondence};
use fresco_core::diffusion::InversionRecord;
use fresco_core::ftns::Tensor;
use fresco_core::media::{load_frames, save_frames, synthesize_scene, FrameSequence, SceneSpec};
use fresco_core::metrics::evaluate;
use fresco_core::pipeline::{estimate_correspondence, Engine, Mode, Propagation, RunConfig};
use fresco_core::{FrescoError, Result};

/// Zero-shot video translation and editing with spatial-temporal
/// correspondence guidance, on a synthetic diffusion backbone.
#[derive(Parser)]
#[command(name = "fresco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sprite scene with ground-truth flows and masks.
    Synth(SynthArgs),
    /// Estimate consecutive flows and occlusion masks of a clip.
    Flow(FlowArgs),
    /// Translate a clip (SDEdit start, DDPM sampling).
    Translate(RunArgs),
    /// Edit a clip (DDIM inversion, injected DDIM sampling).
    Edit(RunArgs),
    /// Keyframe-scheduled run for clips longer than a batch.
    Long(RunArgs),
    /// Score frames against the clip they were produced from.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (INI with global keys and [sprite] sections).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; frames go to `frames/`, ground truth to `flows/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlowArgs {
    /// Frames: a directory, a wildcard pattern or a single FTNS file.
    input: PathBuf,
    /// Run config; only the flow_* keys matter here.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Frames: a directory, a wildcard pattern or a single FTNS file.
    input: PathBuf,
    /// Run config (INI, `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for frames and reports.
    #[arg(long)]
    out: PathBuf,
    /// Flows and masks to use instead of estimating them (as written by
    /// `synth` or `flow`).
    #[arg(long)]
    flows: Option<PathBuf>,
    /// Write the batch / keyframe plan to this file.
    #[arg(long)]
    emit_plan: Option<PathBuf>,
    /// Write the DDIM inversion records under this directory (edit runs).
    #[arg(long)]
    save_inversion: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Frames to score.
    input: PathBuf,
    /// The clip the frames were produced from.
    #[arg(long)]
    reference: PathBuf,
    /// Flows and masks of the reference clip; estimated when absent.
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for `metrics.txt` and `metrics.kv`.
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FrescoError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| FrescoError::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_ini_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn correspondence_for(
    video: &FrameSequence<f64>,
    flows: Option<&Path>,
    cfg: &RunConfig,
) -> Result<ClipCorrespondence<f64>> {
    match flows {
        Some(dir) => {
            let c = load_correspondence(dir, video.len())?;
            c.check(video.len(), video.height(), video.width())?;
            Ok(c)
        }
        None => estimate_correspondence(video.frames(), cfg.flow),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SceneSpec::from_ini_file(&a.config)?;
    let scene = synthesize_scene::<f64>(&spec, a.seed)?;
    save_frames(&scene.frames, &a.out.join("frames"))?;
    save_correspondence(&scene.correspondence(), &a.out.join("flows"))?;
    log::info!("wrote {} frames to {}", scene.frames.len(), a.out.display());
    Ok(())
}

fn flow(a: &FlowArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let video = load_frames::<f64>(&a.input)?;
    let corr = estimate_correspondence(video.frames(), cfg.flow)?;
    save_correspondence(&corr, &a.out)
}

/// Chunked batches of plain translate / edit runs, 1-based.
fn chunk_plan(frames: usize, batch: usize) -> String {
    let mut s = format!("# batches of size {batch} over {frames} frames (1-based)\n");
    let ids: Vec<usize> = (1..=frames).collect();
    for c in ids.chunks(batch) {
        let line: Vec<String> = c.iter().map(usize::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn save_inversions(records: &[InversionRecord<f64>], dir: &Path) -> Result<()> {
    for (b, rec) in records.iter().enumerate() {
        let bdir = dir.join(format!("batch_{b:03}"));
        create_dir(&bdir)?;
        for (i, cap) in rec.steps.iter().enumerate() {
            let t = i + 1;
            for l in 0..cap.layers() {
                let feats: Vec<_> = cap.features[l].frames().iter().map(|g| g.to_matrix()).collect();
                for (name, mats) in [("feature", &feats), ("q", &cap.q[l]), ("k", &cap.k[l])] {
                    let (n, d) = (mats[0].rows(), mats[0].cols());
                    let data = mats.iter().flat_map(|m| m.data().iter().map(|&v| v as f32)).collect();
                    Tensor::new(vec![mats.len(), n, d], data)?
                        .write(&bdir.join(format!("t{t:03}_layer{l}_{name}.ftns")))?;
                }
            }
        }
    }
    Ok(())
}

fn run(mode: Mode, a: &RunArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.mode = mode;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let video = load_frames::<f64>(&a.input)?;
    let corr = correspondence_for(&video, a.flows.as_deref(), &cfg)?;
    let engine = Engine::<f64>::new(cfg.clone())?;
    let out = engine.run(&video, Some(&corr))?;
    save_frames(&out.frames, &a.out.join("frames"))?;
    write_text(&a.out.join("config.ini"), &cfg.to_ini_string())?;
    if let Some(p) = &a.emit_plan {
        let text = if mode == Mode::Long {
            let windows = cfg.propagation != Propagation::Warp;
            out.plan_text(engine.schedule_for(cfg.batch_size).filter(|_| windows).as_ref())
        } else {
            chunk_plan(video.len(), cfg.batch_size)
        };
        write_text(p, &text)?;
    }
    if let Some(dir) = &a.save_inversion {
        if out.inversions.is_empty() {
            log::warn!("no inversion records: only editing runs invert");
        }
        save_inversions(&out.inversions, dir)?;
    }
    if cfg.metrics {
        let report = evaluate(&out.frames, &video, &corr.forward, &corr.forward_masks)?;
        write_text(&a.out.join("metrics.txt"), &report.to_text())?;
        write_text(&a.out.join("metrics.kv"), &report.to_key_values())?;
    }
    Ok(())
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let output = load_frames::<f64>(&a.input)?;
    let reference = load_frames::<f64>(&a.reference)?;
    if (output.height(), output.width()) != (reference.height(), reference.width()) {
        return Err(FrescoError::contract("scored frames and reference differ in size"));
    }
    let corr = correspondence_for(&reference, a.flows.as_deref(), &cfg)?;
    let report = evaluate(&output, &reference, &corr.forward, &corr.forward_masks)?;
    write_text(&a.out.join("metrics.txt"), &report.to_text())?;
    write_text(&a.out.join("metrics.kv"), &report.to_key_values())?;
    print!("{}", report.to_text());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Flow(a) => flow(a),
        Command::Translate(a) => run(Mode::Translate, a),
        Command::Edit(a) => run(Mode::Edit, a),
        Command::Long(a) => run(Mode::Long, a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fresco: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
