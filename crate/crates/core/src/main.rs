use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pulse_core::cli::{self, ExperimentConfig, Stage};

/// Spectral solver and verification harness for perturbed stationary pulses.
#[derive(Parser)]
#[command(name = "pulse", version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Random seed, overriding `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Newton solve for the unperturbed pulse and its decay fit.
    SolveBase,
    /// Smallest eigenvalues of the linearization and the kernel check.
    Spectrum,
    /// Measured constants and the admissible (rho, eps) table.
    Constants,
    /// Picard solve for one perturbation strength.
    Perturb {
        #[arg(long)]
        eps: f64,
    },
    /// Remainder sweep over the configured eps range.
    Sweep,
    /// All stages in order.
    All {
        #[arg(long)]
        eps: Option<f64>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(path) = args.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(cli::EXIT_CONFIG as u8);
    };
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(cli::exit_code(&e) as u8);
        }
    };
    if let Some(out) = args.output {
        cfg.output_dir = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let stage = match args.command {
        Command::SolveBase => Stage::SolveBase,
        Command::Spectrum => Stage::Spectrum,
        Command::Constants => Stage::Constants,
        Command::Perturb { eps } => Stage::Perturb { eps },
        Command::Sweep => Stage::Sweep,
        Command::All { eps } => Stage::All { eps },
    };
    match cli::run(stage, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
