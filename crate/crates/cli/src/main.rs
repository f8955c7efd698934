use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use koopman_steady_cli::{self as cli, CliError, PipelineConfig};

#[derive(Parser)]
#[command(
    version,
    about = "Pick constant inputs that maximize a steady state, via a learned Koopman model"
)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Replaces the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training dataset.
    Simulate,
    /// Fit a model and score held-out multi-step predictions.
    Fit,
    /// Solve the steady-state programs against the fitted model.
    Program,
    /// Check the solutions on the true system.
    Verify,
    /// All of the above in order, plus summary.json.
    Pipeline,
}

fn run(args: &Args) -> Result<(), CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let out = &args.out;
    match args.command {
        Command::Simulate => cli::cmd_simulate(&cfg, out).map(drop),
        Command::Fit => cli::check_fit(&cli::cmd_fit(&cfg, out)?),
        Command::Program => cli::cmd_program(&cfg, out).map(drop),
        Command::Verify => cli::check_reports(&cli::cmd_verify(&cfg, out)?),
        Command::Pipeline => cli::check_summary(&cli::cmd_pipeline(&cfg, out)?),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
