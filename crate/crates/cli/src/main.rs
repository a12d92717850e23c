mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dot_core::DotError;

#[derive(Parser, Debug)]
#[command(name = "dot", version, about = "Transfer reference cell categories onto spatial spots")]
struct Cli {
    /// Worker threads for the solver and preprocessing.
    #[arg(long, global = true, env = "DOT_THREADS")]
    threads: Option<usize>,

    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a transfer map and write it with a run report.
    Fit(FitArgs),
    /// Score predictions against known compositions.
    Eval(EvalArgs),
    /// Generate a planted synthetic instance.
    Synth(SynthArgs),
    /// Pool single cells into square tiles.
    Pool(PoolArgs),
    /// Write the spatial pair set used by the model.
    Pairs(PairsArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ResolutionArg {
    High,
    Low,
}

impl From<ResolutionArg> for dot_core::Resolution {
    fn from(r: ResolutionArg) -> Self {
        match r {
            ResolutionArg::High => dot_core::Resolution::High,
            ResolutionArg::Low => dot_core::Resolution::Low,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FeaturesArg {
    Categorical,
    Continuous,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FitArgs {
    /// Reference expressions, cells × genes (CSV or .mtx).
    #[arg(long)]
    reference: PathBuf,
    /// `cell,label` table; required for categorical features.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Spatial expressions, spots × genes (CSV or .mtx).
    #[arg(long)]
    spatial: PathBuf,
    /// `id,x,y[,z]` per spot.
    #[arg(long)]
    coords: PathBuf,
    /// `population,abundance` table.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "high")]
    resolution: ResolutionArg,
    #[arg(long, value_enum, default_value = "categorical")]
    features: FeaturesArg,
    /// Sub-clusters per population.
    #[arg(long, default_value_t = dot_core::preprocess::DEFAULT_KAPPA)]
    kappa: usize,
    /// Smallest kept sub-cluster, as a fraction of its population.
    #[arg(long, default_value_t = dot_core::preprocess::DEFAULT_MIN_FRACTION)]
    min_fraction: f64,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    cells_per_spot: Option<f64>,
    #[arg(long)]
    distance_threshold: Option<f64>,
    #[arg(long)]
    similarity_cutoff: Option<f64>,
    #[arg(long, default_value_t = 300)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    gap_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    /// Spots × categories, e.g. `Y_populations.csv`.
    #[arg(long)]
    predictions: PathBuf,
    /// Spots × categories with the true fractions.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    coords: PathBuf,
    #[arg(long, value_enum, default_value = "high")]
    resolution: ResolutionArg,
    /// Directory for `metrics.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    populations: usize,
    #[arg(long, default_value_t = 100)]
    genes: usize,
    #[arg(long, default_value_t = 1000)]
    spots: usize,
    #[arg(long, default_value_t = 1)]
    min_cells: usize,
    #[arg(long, default_value_t = 1)]
    max_cells: usize,
    /// Largest allowed cosine similarity between centroids.
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    /// Multiplicative noise level in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[arg(long, default_value_t = 20)]
    reference_cells: usize,
    #[arg(long, default_value_t = 10.0)]
    spacing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PoolArgs {
    /// Single-cell expressions with coordinates, cells × genes.
    #[arg(long)]
    cells: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    coords: PathBuf,
    /// Tile edge length in coordinate units.
    #[arg(long)]
    tile: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PairsArgs {
    #[arg(long)]
    spatial: PathBuf,
    #[arg(long)]
    coords: PathBuf,
    #[arg(long)]
    distance_threshold: Option<f64>,
    #[arg(long)]
    similarity_cutoff: Option<f64>,
    /// Output CSV; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Fit(a) => commands::fit(a, cli.threads),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Pool(a) => commands::pool(a),
        Command::Pairs(a) => commands::pairs(a, cli.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let configuration = matches!(e.downcast_ref::<DotError>(), Some(DotError::NoSharedGenes));
            ExitCode::from(if configuration { 2 } else { 1 })
        }
    }
}
