//! `lamopt`: dataset generation, surrogate training and evaluation, and
//! laminate topology optimisation from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use lamopt_core::nn::Architecture;
use serde_json::{Map, Value};

#[derive(Parser, Debug)]
#[command(name = "lamopt", version, about = "Laminate topology optimisation with neural-network seeding")]
struct Cli {
    /// `key = value` file; keys are long flag names of the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the high-fidelity optimiser over the parameter grid.
    GenerateDataset(GenerateArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Predict a density field from load parameters.
    Predict(PredictArgs),
    /// Optimise one load case.
    Optimize(OptimizeArgs),
    /// Score checkpoints on a split, optionally comparing seeded optimisation.
    Evaluate(EvaluateArgs),
    /// Write stored density fields as PGM images or CSV.
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct MeshArgs {
    /// Quads along x.
    #[arg(long, default_value_t = 48)]
    pub nx: usize,
    /// Quads along y.
    #[arg(long, default_value_t = 24)]
    pub ny: usize,
}

#[derive(Args, Debug, Clone)]
pub struct OptimiserArgs {
    /// Relative stopping tolerance of the relaxed phase (compliance and volume).
    #[arg(long, default_value_t = 0.5e-2)]
    pub xi: f64,
    /// Relative stopping tolerance of the penalised phase.
    #[arg(long, default_value_t = 0.5e-4)]
    pub xi_tilde: f64,
    #[arg(long, default_value_t = 0.4)]
    pub target_volume: f64,
    /// Fixed Lagrange multiplier instead of re-solving it for the target volume.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub optimiser: OptimiserArgs,
    /// Keep every n-th of the 45 load positions.
    #[arg(long, default_value_t = 1)]
    pub positions_stride: usize,
    /// Keep every n-th of the 60 load angles.
    #[arg(long, default_value_t = 1)]
    pub angles_stride: usize,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Dataset file; an existing one is resumed.
    #[arg(long, default_value = "dataset.bin")]
    pub output: PathBuf,
    /// Rewrite the dataset file after this many finished points.
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DimsChoice {
    /// Widths scaled to the dataset's grid.
    Scaled,
    /// Published full-size widths.
    Reference,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// `crossval`, or the name of an extrapolation split.
    #[arg(long, default_value = "crossval")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// ffd, effd, saeffd, saeff or ae.
    #[arg(long, default_value = "ffd", value_parser = parse_architecture)]
    pub arch: Architecture,
    #[arg(long, value_enum, default_value_t = DimsChoice::Scaled)]
    pub dims: DimsChoice,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Initialisation and shuffling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub omega_alpha: Option<f64>,
    #[arg(long)]
    pub omega_r: Option<f64>,
    #[arg(long)]
    pub omega_r_i: Option<f64>,
    #[arg(long)]
    pub omega_r_ii: Option<f64>,
    /// Checkpoint file; the history goes next to it.
    #[arg(long, default_value = "model.bin")]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub eta1: f64,
    #[arg(long)]
    pub eta2: f64,
    /// Dataset-format file with the predicted density; a PGM goes next to it.
    #[arg(long, default_value = "prediction.bin")]
    pub output: PathBuf,
    /// Densities below this render as void.
    #[arg(long, default_value_t = 1e-2)]
    pub export_threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    /// Relaxed then penalised optimisation from a uniform start.
    Hifi,
    /// Penalised optimisation seeded by a network prediction.
    Surrogate,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long, value_enum, default_value_t = Algo::Hifi)]
    pub algo: Algo,
    /// Checkpoint of a predictive network, for `--algo surrogate`.
    #[arg(long)]
    pub seed_model: Option<PathBuf>,
    #[arg(long)]
    pub eta1: f64,
    #[arg(long)]
    pub eta2: f64,
    #[command(flatten)]
    pub mesh: MeshArgs,
    #[command(flatten)]
    pub optimiser: OptimiserArgs,
    /// Directory for the trace, density and image.
    #[arg(long, default_value = "optimize-out")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    pub export_threshold: f64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to score; repeat for several. With `crossval`, the k-th
    /// model is scored on split `split-seed + k`.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub model: Vec<PathBuf>,
    /// `crossval` or an extrapolation split name; one for all models, or
    /// one per model in order.
    #[arg(long, default_value = "crossval", action = clap::ArgAction::Append)]
    pub split: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Also run seeded versus reference optimisation on the test entries.
    #[arg(long)]
    pub compare: bool,
    #[command(flatten)]
    pub optimiser: OptimiserArgs,
    /// Metrics CSV; comparison tables go next to it.
    #[arg(long, default_value = "metrics.csv")]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Pgm,
    Csv,
    Both,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Dataset-format file (a dataset, prediction or optimised density).
    #[arg(long)]
    pub input: PathBuf,
    /// Entry to export; all entries when omitted.
    #[arg(long)]
    pub id: Option<u32>,
    #[arg(long, value_enum, default_value_t = ExportFormat::Pgm)]
    pub format: ExportFormat,
    #[arg(long, default_value = "export")]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    pub export_threshold: f64,
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    Architecture::parse(s).map_err(|e| e.to_string())
}

/// Resolved flag values of the subcommand, for the manifest.
fn snapshot(matches: &ArgMatches) -> Map<String, Value> {
    let mut out = Map::new();
    let Some((name, sub)) = matches.subcommand() else { return out };
    let cli = Cli::command();
    let Some(def) = cli.find_subcommand(name) else { return out };
    for id in sub.ids() {
        if !def.get_arguments().any(|a| a.get_id() == id) {
            continue;
        }
        let Ok(Some(raw)) = sub.try_get_raw(id.as_str()) else { continue };
        let values: Vec<Value> = raw.map(|v| Value::String(v.to_string_lossy().into_owned())).collect();
        let value = match values.len() {
            1 => values.into_iter().next().unwrap(),
            _ => Value::Array(values),
        };
        out.insert(id.as_str().to_string(), value);
    }
    out
}

pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<lamopt_core::Error> for CliError {
    fn from(e: lamopt_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let args: Vec<String> = match std::env::args_os().map(|a| a.into_string()).collect() {
        Ok(a) => a,
        Err(_) => {
            eprintln!("error: arguments must be valid UTF-8");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let args = match config::expand_args(args, &Cli::command(), std::env::var(config::SEED_ENV).ok()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let matches = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match commands::run(cli.command, snapshot(&matches)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
