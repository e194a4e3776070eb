mod commands;
mod plot;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cebd_core::Normalization;

/// Coded-exposure blur decomposition: code design, simulation, training and
/// frame extraction.
#[derive(Debug, Parser)]
#[command(name = "cebd", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank binary exposure codes by the flatness of their DFT spectrum.
    CodeSearch(CodeSearchArgs),
    /// Synthesize a coded-exposure snapshot from consecutive frames.
    Simulate(SimulateArgs),
    /// Show how a code treats a 1-D object moving in opposite directions.
    AmbiguityDemo(AmbiguityArgs),
    /// Write procedural toy clips usable as a dataset.
    ToyDataset(ToyDatasetArgs),
    /// Index a directory of videos into a manifest file.
    Ingest(IngestArgs),
    /// Train a decomposition network.
    Train(TrainArgs),
    /// Extract latent frames from a coded snapshot.
    Decompose(DecomposeArgs),
    /// Extract only the middle frame (decompose --indices mid).
    Deblur(DeblurArgs),
    /// Score a checkpoint on a manifest (PSNR/SSIM per frame, window, video).
    Eval(EvalArgs),
    /// Train and score one model per code length and duty ratio.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    OnesCount,
    Length,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::OnesCount => Normalization::OnesCount,
            NormArg::Length => Normalization::Length,
        }
    }
}

#[derive(Debug, Args)]
struct CodeSearchArgs {
    #[arg(long)]
    length: usize,
    /// Number of open segments.
    #[arg(long)]
    ones: usize,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Keep palindromic codes in the ranking.
    #[arg(long)]
    allow_symmetric: bool,
    /// Random candidates drawn for lengths beyond exhaustive search.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table to <out>/codes.tsv.
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Video directory holding 000000.png, 000001.png, ...
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value = "11100101")]
    code: String,
    /// First frame of the window.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "ones-count")]
    normalization: NormArg,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AmbiguityArgs {
    #[arg(long)]
    code: String,
    /// Row width of the toy scene in pixels.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Object length in pixels.
    #[arg(long, default_value_t = 6)]
    extent: usize,
    /// Displacement per code bit in pixels.
    #[arg(long, default_value_t = 3)]
    shift: usize,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ToyDatasetArgs {
    #[arg(long, default_value_t = 2)]
    scenes: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    objects: usize,
    /// Also write each scene played backwards.
    #[arg(long)]
    reversed_pairs: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    /// Every video, written as a training manifest.
    All,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Directory with one sub-directory of numbered PNG frames per video.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// Share of videos (by sorted id) assigned to the training split.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    train_fraction: f64,
    /// Frames per window; shorter videos are rejected.
    #[arg(long, default_value_t = 8)]
    window: usize,
    /// Directory receiving <split>.manifest.
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Tiny,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML training config; without it the preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

/// Frames to extract: `all`, `mid`, or a comma-separated list such as `0,3,7`.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Indices {
    All,
    Mid,
    List(Vec<usize>),
}

fn parse_indices(s: &str) -> Result<Indices, String> {
    match s {
        "all" => Ok(Indices::All),
        "mid" => Ok(Indices::Mid),
        _ => s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad frame index {t:?}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Indices::List),
    }
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Snapshot PNG; height and width must be multiples of 4.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_indices, default_value = "all")]
    indices: Indices,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DeblurArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Snapshot noise; defaults to the level stored with the checkpoint.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score a centered square of this size instead of the full frame.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// TOML with `lengths`, `duty_ratios` and a `[train]` table.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "CEBD_OUT_DIR")]
    out: PathBuf,
}

/// A request the command cannot satisfy as written.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Usage>() || e.downcast_ref::<cebd_core::Error>().is_some_and(|c| c.is_usage())
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let reason: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("tip:"))
                .collect();
            eprintln!("{} (see --help)", reason.join(" "));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
