mod config;
mod io;
mod learn;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Parser, Debug)]
#[command(
    name = "dsglight",
    version,
    about = "Spherical Gaussian lighting: fit, render, warp, train and infer"
)]
struct Cli {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a light to an HDR panorama (and optional depth map).
    Fit(FitArgs),
    /// Render a light back to an equirectangular panorama.
    Reconstruct(ReconstructArgs),
    /// Render diffuse irradiance per panorama direction.
    RenderIrradiance(IrradianceArgs),
    /// Move a depth-augmented light to a nearby point.
    Probe(ProbeArgs),
    /// PSNR of one panorama against a reference.
    Metrics(MetricsArgs),
    /// Export the node layout and its k-NN graph.
    Nodes(NodesArgs),
    /// Build a training set of crops and target lights from a panorama directory.
    Dataset(DatasetArgs),
    /// Train the predictor on a dataset manifest.
    Train(TrainArgs),
    /// Predict a light from one image with a trained checkpoint.
    Infer(InferArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Depth panorama (PFM, one channel).
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Fit report path; defaults to the output path with a `.report.json` suffix.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fitting width; larger inputs are box-filtered down.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    weighting: Option<dsglight::fitter::Weighting>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write the depth channel to this PFM.
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args, Debug)]
struct IrradianceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Quadrature directions per evaluation.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Probe position relative to the capture point, in meters.
    #[arg(long, value_parser = parse_offset, allow_hyphen_values = true)]
    offset: [f64; 3],
    /// Rescale each lobe's sharpness with the squared depth ratio.
    #[arg(long)]
    rescale_sharpness: bool,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct NodesArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Written to standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Directory of `.hdr` / `.pfm` panoramas; `<stem>.depth.pfm` is used as depth.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Crops per panorama.
    #[arg(long)]
    crops: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    weighting: Option<dsglight::fitter::Weighting>,
    /// Fitting width of the target lights.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest; optional with `--overfit-smoke`, which then synthesizes 8 rooms.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    output: PathBuf,
    /// Loss curve CSV; defaults to the output path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// Memorize 8 samples and require a training PSNR of 30 dB.
    #[arg(long)]
    overfit_smoke: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Image to predict from: an LDR crop (PFM) or an HDR image, tone-mapped on load.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also render the predicted light to this HDR panorama.
    #[arg(long)]
    hdr: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Expected node count; refuses checkpoints built on a different graph.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

fn parse_offset(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("`{p}`: {e}"))?;
    }
    Ok(out)
}

/// Failure classes, mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, missing or malformed input: exit code 2.
    Input(String),
    /// Anything else: exit code 1.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Failed(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Failed(m) => m,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags a core error with the path it came from. Parse and validation problems count as bad input.
pub fn input_err(path: &std::path::Path) -> impl Fn(dsglight::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

pub fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("DSGLIGHT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("DSGLIGHT_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(failed)
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Fit(a) => pipeline::fit(a, &cfg),
        Command::Reconstruct(a) => pipeline::reconstruct(a, &cfg),
        Command::RenderIrradiance(a) => pipeline::render_irradiance(a, &cfg),
        Command::Probe(a) => pipeline::probe(a),
        Command::Metrics(a) => pipeline::metrics(a),
        Command::Nodes(a) => pipeline::nodes(a, &cfg),
        Command::Dataset(a) => learn::dataset(a, &cfg),
        Command::Train(a) => learn::train(a, &cfg),
        Command::Infer(a) => learn::infer(a, &cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dsglight: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
