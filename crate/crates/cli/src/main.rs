mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "stochid", version, about = "Identify random compliance-field hyperparameters from strain observations")]
struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON pipeline configuration; command-line flags take precedence.
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample hyperparameters and run the forward model to build the initial database.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of database rows.
        #[arg(short = 'n', long)]
        rows: Option<usize>,
    },
    /// Replace every QoI row by its kernel conditional mean given the hyperparameters.
    Condition {
        #[command(flatten)]
        common: Common,
        /// Initial database directory.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Multiply every kernel bandwidth.
        #[arg(long)]
        bandwidth_scale: Option<f64>,
        /// `trapezoid` or `closed-form`.
        #[arg(long)]
        method: Option<String>,
    },
    /// QoI / hyperparameter correlation matrix as CSV and SVG heatmap.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: PathBuf,
    },
    /// Train the surrogate network on a database.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        db: PathBuf,
        /// Hidden layer widths, e.g. `50` or `25,10`.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_iterations: Option<usize>,
        /// Train the whole architecture grid and write a comparison table.
        #[arg(long)]
        sweep: bool,
    },
    /// Evaluate a trained network on an observed QoI vector.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// JSON file `{"q": [9 numbers]}`.
        #[arg(long)]
        obs: PathBuf,
    },
    /// Propagate input uncertainty on the observation through the network.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Comma-separated dispersion levels.
        #[arg(long)]
        s: Option<String>,
        /// Samples per level.
        #[arg(short = 'n', long)]
        samples: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        stochid_core::par::configure_threads(n)?;
    }
    match cli.command {
        Command::Generate { common, rows } => commands::generate(&common, rows),
        Command::Condition { common, db, bandwidth_scale, method } => {
            commands::condition(&common, db, bandwidth_scale, method.as_deref())
        }
        Command::Analyze { common, db } => commands::analyze(&common, &db),
        Command::Train { common, db, arch, restarts, max_iterations, sweep } => {
            commands::train(&common, &db, arch.as_deref(), restarts, max_iterations, sweep)
        }
        Command::Identify { common, model, obs } => commands::identify(&common, &model, &obs),
        Command::Robustness { common, model, obs, s, samples } => {
            commands::robustness(&common, &model, obs, s.as_deref(), samples)
        }
    }
}

/// 2 for bad inputs, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<stochid_core::Error>() {
            return if e.is_user_error() { 2 } else { 3 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
