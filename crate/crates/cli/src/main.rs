//! `mlpsel`: fit, select and simulate single-hidden-layer networks.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Io;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mlpsel", version, about = "Architecture selection for one-hidden-layer networks")]
struct Cli {
    /// TOML configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Draw a dataset from a known network.
    Generate,
    /// Maximum-likelihood fit for one k (JSON output).
    Fit,
    /// Penalized-likelihood selection of k.
    Select,
    /// Replicated selection experiment over a grid of n.
    Simulate,
    /// Likelihood-ratio statistic experiment.
    Lrs,
    /// Second-order expansion remainder along a shrinking path.
    ExpandCheck,
    /// Gram matrix of the derivative family at θ⁰.
    GramCheck,
    /// Growth conditions of a penalty on a grid.
    CheckPenalty,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let config = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let out = cli.out.ok_or_else(|| CliError::Config("--out is required".into()))?;
    let io = Io { config, out, seed: cli.seed };
    match cli.command {
        Command::Generate => commands::generate(&io),
        Command::Fit => commands::fit(&io),
        Command::Select => commands::select(&io),
        Command::Simulate => commands::simulate(&io),
        Command::Lrs => commands::lrs(&io),
        Command::ExpandCheck => commands::expand_check(&io),
        Command::GramCheck => commands::gram_check(&io),
        Command::CheckPenalty => commands::check_penalty(&io),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
