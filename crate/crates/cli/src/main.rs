//! `kanok`: dataset generation, corpus fetching, training, sweeps,
//! stylization and comparison grids.
//!
//! Settings come from an optional TOML file (`--config`); flags override it.
//! Exit codes: 0 success, 2 usage error, 3 runtime failure, 4 training
//! divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "kanok", version, about = "Decorative-style datasets and CycleGAN training for silhouettes")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info", env = "KANOK_LOG")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural style dataset (domain B).
    GenStyle(GenStyleArgs),
    /// Download or synthesize the silhouette dataset (domain A).
    FetchCorpus(FetchCorpusArgs),
    /// Train one CycleGAN run.
    Train(TrainArgs),
    /// Train one run per loss-weight variant and tabulate the results.
    Sweep(SweepArgs),
    /// Translate one image with a trained checkpoint.
    Stylize(StylizeArgs),
    /// Render a labeled comparison grid of runs on test silhouettes.
    Grid(GridArgs),
    /// Render one of the 32 decorative elements and dump its control points.
    ExportElement(ExportElementArgs),
    /// Print the effective configuration (file plus defaults) as TOML.
    ShowConfig(ShowConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML configuration file; flags override its values [default: built-in defaults].
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenStyleArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Master seed [default: synth.seed = 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training images [default: synth.train = 2900].
    #[arg(long)]
    pub train: Option<usize>,
    /// Test images [default: synth.test = 100].
    #[arg(long)]
    pub test: Option<usize>,
    /// Canvas side in pixels [default: synth.style.canvas_px = 256].
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory [default: synth.out = data/style].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchCorpusArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Taxon to query [default: corpus.taxon = bird].
    #[arg(long)]
    pub taxon: Option<String>,
    /// Generate offline blob silhouettes instead of downloading [default: corpus.synthetic = false].
    #[arg(long)]
    pub synthetic: bool,
    /// Master seed for --synthetic [default: corpus.seed = 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training images [default: corpus.image.n_train = 300].
    #[arg(long)]
    pub train: Option<usize>,
    /// Test images [default: corpus.image.n_test = 50].
    #[arg(long)]
    pub test: Option<usize>,
    /// Canvas side in pixels [default: corpus.image.canvas_px = 256].
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory [default: corpus.out = data/silhouettes].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Download cache [default: corpus.cache_dir = cache/phylopic].
    #[arg(long, value_name = "DIR", env = "KANOK_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    /// API base URL [default: corpus.api_url = https://api.phylopic.org].
    #[arg(long, value_name = "URL")]
    pub api_url: Option<String>,
}

/// Flags shared by `train` and `sweep`, overriding `[run]`.
#[derive(Debug, Args)]
pub struct RunOverrides {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Domain A dataset [default: run.data_a = data/silhouettes].
    #[arg(long, value_name = "DIR")]
    pub data_a: Option<PathBuf>,
    /// Domain B dataset [default: run.data_b = data/style].
    #[arg(long, value_name = "DIR")]
    pub data_b: Option<PathBuf>,
    /// Image side in pixels, a power of two ≥ 32 [default: run.image_size = 256].
    #[arg(long)]
    pub size: Option<usize>,
    /// Training epochs [default: run.epochs = 200].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Filters in the first layer of every network [default: run.base_filters = 64].
    #[arg(long)]
    pub base_filters: Option<usize>,
    /// Weight initialization seed [default: run.init_seed = 0].
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Data order and dropout seed [default: run.data_seed = 0].
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Epochs between checkpoints [default: run.checkpoint_every = 10].
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Test silhouettes stylized at the end [default: run.samples = 10].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Output directory [default: run.output_dir = runs/baseline].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Cycle-consistency multiplier [default: run.weights.cycle = 1].
    #[arg(long)]
    pub w_cycle: Option<f64>,
    /// Identity multiplier [default: run.weights.identity = 1].
    #[arg(long)]
    pub w_identity: Option<f64>,
    /// Generator adversarial multiplier [default: run.weights.adv = 1].
    #[arg(long)]
    pub w_adv: Option<f64>,
    /// Discriminator multiplier [default: run.weights.disc = 1].
    #[arg(long)]
    pub w_disc: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Continue the run this checkpoint belongs to; only --epochs applies [default: train from scratch].
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunOverrides,
    /// Variant as NAME=TERM:VALUE[,TERM:VALUE] or a label like 2xCycleLoss; repeatable.
    /// Terms: cycle, identity, gen (adv), disc. A baseline run is always added
    /// [default: sweep.variants, else baseline plus 2x/0.5x of every term].
    #[arg(long = "variant", value_name = "SPEC")]
    pub variants: Vec<String>,
    /// Variants trained concurrently [default: sweep.jobs = 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    /// Input PNG; other sizes are letterboxed to the model size.
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    /// Output PNG.
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    /// a2b (silhouette to style) or b2a.
    #[arg(long, default_value = "a2b")]
    pub direction: String,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Run directory to include as a column, labeled by its name; repeatable [default: none].
    #[arg(long = "run", value_name = "DIR")]
    pub runs: Vec<PathBuf>,
    /// Sweep directory; adds every variant in its summary as a column [default: none].
    #[arg(long, value_name = "DIR")]
    pub sweep: Option<PathBuf>,
    /// Silhouette dataset whose test split supplies the rows.
    #[arg(long, value_name = "DIR")]
    pub images: PathBuf,
    /// Number of test images (rows).
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Output PNG.
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportElementArgs {
    /// Element id, 0 to 31.
    #[arg(long)]
    pub id: usize,
    /// Render size in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ShowConfigArgs {
    #[command(flatten)]
    pub config: ConfigArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
