use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twsc::{ChannelKind, Execution, LossMode, SystemKind};

#[derive(Debug, Parser)]
#[command(name = "twsc", version, about = "Two-way semantic image transmission experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one system and write a run directory.
    Train(TrainArgs),
    /// Evaluate a trained run over an SNR sweep.
    Eval(EvalArgs),
    /// Plot PSNR/SSIM curves from run or evaluation files.
    Plot(PlotArgs),
    /// Train and evaluate the full system x channel grid and check the results.
    Reproduce(ReproduceArgs),
    /// Download MNIST (or unpack a local copy) into the data directory.
    FetchData(FetchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Option<Precision> {
        match s {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Directory holding run directories.
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// MNIST directory; overrides TWSC_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// twsc, jscc or gansc.
    #[arg(long)]
    pub system: Option<SystemKind>,
    /// Training channel: awgn or rayleigh.
    #[arg(long)]
    pub channel: Option<ChannelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value config file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train on the first N images only (0 = all).
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Evaluate on the first N test images only (0 = all).
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// standard_hinge or paper_literal.
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    /// deterministic or threaded.
    #[arg(long)]
    pub execution: Option<Execution>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    /// Run directory name; derived from the config when omitted.
    #[arg(long)]
    pub run_id: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Run id (under --runs-dir) or path to a run directory.
    #[arg(long)]
    pub run: String,
    #[arg(long, default_value = "awgn")]
    pub eval_channel: ChannelKind,
    /// Comma-separated SNR list in dB; defaults to the run's config.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr: Option<Vec<f64>>,
    /// Checkpoint epoch; defaults to the latest.
    #[arg(long)]
    pub epoch: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotMetric {
    Psnr,
    Ssim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotAxis {
    Snr,
    Epoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotDirection {
    #[value(name = "a2b")]
    AToB,
    #[value(name = "b2a")]
    BToA,
    Both,
}

#[derive(Clone, Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub metric: PlotMetric,
    #[arg(long, value_enum)]
    pub x: PlotAxis,
    /// Run directories (for --x epoch) or evaluation CSV files (for --x snr).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output SVG; the sidecar CSV is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Link curves to draw for --x epoch.
    #[arg(long, value_enum, default_value = "a2b")]
    pub direction: PlotDirection,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Smoke,
    Full,
}

#[derive(Clone, Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_enum, default_value = "smoke")]
    pub scale: Scale,
    #[arg(long, default_value = "0")]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    /// Override the number of epochs of the chosen scale.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the training-subset size of the chosen scale.
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Clone, Debug, Args)]
pub struct FetchArgs {
    /// Destination; defaults to TWSC_DATA_DIR or data/mnist.
    #[arg(long)]
    pub dest: Option<PathBuf>,
    /// Copy from a local directory of raw or gzipped IDX files instead of downloading.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long, default_value = crate::fetch::DEFAULT_BASE_URL)]
    pub base_url: String,
}
