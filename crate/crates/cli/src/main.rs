use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use neurofield_cli::{run, Command, RunArgs};

/// Simulate random neural networks with delays and solve their mean-field limit.
#[derive(Parser)]
#[command(name = "neurofield", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file (defaults apply to missing keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Dotted-path override, e.g. `coupling.mean.amplitude=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate one finite network.
    Simulate(Common),
    /// Solve the mean-field fixed point by Picard iteration.
    Meanfield(Common),
    /// Compare two ensemble files.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Ensemble file (CSV, or `.bin`); give exactly two.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Finite-size convergence and pair-correlation sweeps.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// convergence, chaos or both (default: `run.sweep`).
        #[arg(long)]
        kind: Option<String>,
    },
    /// Run the identity checks.
    Check(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Meanfield(c) => (Command::Meanfield, c),
        Sub::Compare { common, inputs } => (Command::Compare { inputs }, common),
        Sub::Sweep { common, kind } => (Command::Sweep { kind }, common),
        Sub::Check(c) => (Command::Check, c),
    };
    let args = RunArgs {
        command,
        config: common.config,
        overrides: common.overrides,
        out: common.out,
        seed: common.seed,
        threads: common.threads,
    };
    match run(&args) {
        Ok(manifest) => {
            log::info!("{} finished: run {} in {}", manifest.command, manifest.run_id, args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
