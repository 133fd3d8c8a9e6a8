use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use pathoscope::commands;
use pathoscope::config::{load_config, BuildPatchesConfig, DetectCmdConfig};
use pathoscope::server;
use pathoscope_core::eval::ExtraTreesConfig;
use pathoscope_core::model::TrainConfig;
use pathoscope_core::patchset::SplitMode;
use pathoscope_core::synth::SynthConfig;

/// Pathogen detection workbench: synthetic data, patch datasets, CNN
/// training, evaluation against a shape-feature baseline, detection, and a
/// review API.
#[derive(Parser)]
#[command(name = "pathoscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus (PNG images + manifest.json).
    Synth(SynthArgs),
    /// Cut, balance, augment and split patches into a patch cache.
    BuildPatches(BuildPatchesArgs),
    /// Train the CNN on a patch cache.
    Train(TrainArgs),
    /// Score the test patches with the CNN and the extra-trees baseline; write ROC/PR CSVs.
    Evaluate(EvaluateArgs),
    /// Run sliding-window detection over corpus images; write detections.jsonl.
    Detect(DetectArgs),
    /// Draw truth boxes (white) and detections (red) onto each corpus image.
    ExportOverlays(ExportOverlaysArgs),
    /// Serve the review API (and optionally the UI bundle) over a data directory.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with this command's settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_images: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args)]
struct BuildPatchesArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory holding manifest.json.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// `image` (split by source image) or `patch` (stratified patch split).
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitMode>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    downsample_factor: Option<u32>,
    #[arg(long)]
    negatives_per_image: Option<usize>,
    #[arg(long)]
    target_label: Option<String>,
}

fn parse_split(s: &str) -> Result<SplitMode, String> {
    match s {
        "image" => Ok(SplitMode::Image),
        "patch" => Ok(SplitMode::Patch),
        _ => Err(format!("expected `image` or `patch`, got {s:?}")),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Patch cache file, or a build-patches run directory.
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    patches: PathBuf,
    /// Model file, or a train run directory.
    #[arg(long)]
    model: PathBuf,
    /// Seed of the extra-trees baseline.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_trees: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    probability_threshold: Option<f64>,
    #[arg(long)]
    overlap_threshold: Option<f64>,
    /// Restrict to these image ids (repeatable).
    #[arg(long = "image")]
    images: Vec<String>,
}

#[derive(Args)]
struct ExportOverlaysArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// detections.jsonl, or a detect run directory.
    #[arg(long)]
    detections: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = server::DATA_DIR_ENV)]
    data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Static files served at `/` (the review UI bundle).
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let manifest = match cli.command {
        Command::Synth(a) => {
            let mut cfg: SynthConfig = load_config(a.common.config.as_deref())?;
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.n_images, a.n_images);
            set(&mut cfg.image_size, a.image_size);
            commands::synth(&cfg, &a.common.out)?
        }
        Command::BuildPatches(a) => {
            let mut cfg: BuildPatchesConfig = load_config(a.common.config.as_deref())?;
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.split, a.split);
            set(&mut cfg.patch.patch_size, a.patch_size);
            set(&mut cfg.patch.stride, a.stride);
            set(&mut cfg.patch.downsample_factor, a.downsample_factor);
            set(&mut cfg.patch.target_label, a.target_label);
            if a.negatives_per_image.is_some() {
                cfg.patch.negatives_per_image = a.negatives_per_image;
            }
            commands::build_patches(&a.corpus, &cfg, &a.common.out)?
        }
        Command::Train(a) => {
            let mut cfg: TrainConfig = load_config(a.common.config.as_deref())?;
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.epochs, a.epochs);
            set(&mut cfg.learning_rate, a.learning_rate);
            set(&mut cfg.momentum, a.momentum);
            set(&mut cfg.batch_size, a.batch_size);
            commands::train(&a.patches, &cfg, &a.common.out, &mut |e| {
                eprintln!("epoch {}/{} loss {:.6}", e.epoch, e.epochs, e.mean_loss);
            })?
        }
        Command::Evaluate(a) => {
            let mut cfg: ExtraTreesConfig = load_config(a.common.config.as_deref())?;
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.n_trees, a.n_trees);
            commands::evaluate(&a.patches, &a.model, &cfg, &a.common.out)?.0
        }
        Command::Detect(a) => {
            let mut cfg: DetectCmdConfig = load_config(a.common.config.as_deref())?;
            if a.stride.is_some() {
                cfg.stride = a.stride;
            }
            set(&mut cfg.probability_threshold, a.probability_threshold);
            set(&mut cfg.overlap_threshold, a.overlap_threshold);
            if !a.images.is_empty() {
                cfg.images = a.images;
            }
            commands::detect(&a.corpus, &a.model, &cfg, &a.common.out)?
        }
        Command::ExportOverlays(a) => commands::export_overlays(&a.corpus, &a.detections, &a.out)?,
        Command::Serve(a) => {
            let rt = tokio::runtime::Runtime::new()?;
            return rt.block_on(server::serve(&a.data_dir, a.ui_dir.as_deref(), &a.addr));
        }
    };
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
