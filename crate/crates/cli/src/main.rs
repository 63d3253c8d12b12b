//! `mine`: calibrate, generate, train, evaluate and verify from one JSON config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mine_core::{MineError, Result};

use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "mine", version, about = "Posterior-informed emulator pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run DRAM on synthetic observations and write the chain.
    Calibrate(Common),
    /// Build training datasets from the chain.
    Generate(Common),
    /// Train the horizon-interval emulator (FaIR-lite only).
    TrainQuantile(Common),
    /// Train the AEODE trajectory emulator.
    TrainForward(Common),
    /// Score trained emulators on their test splits.
    Evaluate(Common),
    /// Posterior-predictive ensemble through the trained AEODE.
    Ensemble(Common),
    /// Run the transport-bound theory suite.
    VerifyBounds(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &MineError) -> u8 {
    match e {
        MineError::Config(_) | MineError::Usage(_) => 2,
        MineError::Provenance(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, stage): (&Common, fn(&PipelineConfig) -> Result<()>) = match &cli.command {
        Command::Calibrate(c) => (c, commands::calibrate),
        Command::Generate(c) => (c, commands::generate),
        Command::TrainQuantile(c) => (c, commands::train_quantile_cmd),
        Command::TrainForward(c) => (c, commands::train_forward),
        Command::Evaluate(c) => (c, commands::evaluate),
        Command::Ensemble(c) => (c, commands::ensemble),
        Command::VerifyBounds(c) => (c, commands::verify_bounds),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(MineError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| MineError::Usage(e.to_string()))?;
    }
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    stage(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
