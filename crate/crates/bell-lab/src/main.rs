use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bell_lab::analysis::Estimator;
use bell_lab::harness;

#[derive(Parser)]
#[command(
    name = "bell-lab",
    about = "CHSH experiment simulator: quantum and local-hidden-variable \
             sources, lossy stations, coincidence analysis, and efficiency \
             threshold scans",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Conditional,
    AllTrials,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Conditional => Estimator::Conditional,
            EstimatorArg::AllTrials => Estimator::AllTrials,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configured scenario and write logs plus results.json.
    Run(RunArgs),
    /// Pair two station logs and estimate the CHSH value.
    Analyze(AnalyzeArgs),
    /// Tabulate the LHV maximum S over an efficiency grid.
    ScanEta(ScanArgs),
    /// Compare active and passive switch configurations.
    CompareSwitch(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Alice's NDJSON event log.
    log_a: PathBuf,
    /// Bob's NDJSON event log.
    log_b: PathBuf,
    /// Coincidence window; defaults to a quarter of the trial period.
    #[arg(long)]
    window_ns: Option<i64>,
    #[arg(long, value_enum, default_value = "conditional")]
    estimator: EstimatorArg,
    /// Violation threshold in standard errors.
    #[arg(long, default_value_t = 3.0)]
    k_sigma: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    /// Efficiency grid bounds: low then high.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.55, 1.0])]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Target S whose critical efficiency is reported
    /// (default 2*sqrt(2)).
    #[arg(long, default_value_t = 2.0 * std::f64::consts::SQRT_2)]
    target: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 0.5)]
    active_transmission: f64,
    #[arg(long, default_value_t = 1.0)]
    passive_transmission: f64,
    /// Monte Carlo sample count for the two-sample test.
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => {
            harness::cmd_run(&args.config, args.seed, args.out_dir.as_deref()).map(|_| ())
        }
        Command::Analyze(args) => harness::cmd_analyze(
            &args.log_a,
            &args.log_b,
            args.window_ns,
            args.estimator.into(),
            args.k_sigma,
            &args.out_dir,
        )
        .map(|_| ()),
        Command::ScanEta(args) => harness::cmd_scan_eta(
            args.grid[0],
            args.grid[1],
            args.steps,
            args.target,
            &args.out_dir,
        )
        .map(|_| ()),
        Command::CompareSwitch(args) => harness::cmd_compare_switch(
            args.active_transmission,
            args.passive_transmission,
            args.n,
            args.seed,
        )
        .map(|_| ()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(harness::exit_code(&err) as u8)
        }
    }
}
