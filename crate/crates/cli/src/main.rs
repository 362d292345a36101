//! `netflow`: simulate, filter, smooth, decompose, score and report
//! network flow panels.
//!
//! Exit codes: 0 success, 2 parse or config error, 3 numerical error,
//! 4 missing upstream artifact.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use netflow_core::config::RunConfig;
use netflow_core::pipeline::{run_pipeline, Command};
use netflow_core::Error;

/// Environment variable holding the default worker count.
const WORKERS_ENV: &str = "NETFLOW_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "netflow",
    version,
    about = "Dynamic network flow analysis pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Stage,

    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Random seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (overrides the config and NETFLOW_WORKERS)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory (overrides the config)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Stage {
    /// Simulate a panel and its ground truth
    Simulate,
    /// Forward-filter every active edge
    Filter,
    /// Backward-sample trajectories and recouple transition probabilities
    Smooth,
    /// Dynamic gravity decomposition and credible values
    Gravity,
    /// One-step forecast scores against the discount-gamma baseline
    Evaluate,
    /// Plot-ready long tables from earlier stages
    Report,
}

impl From<Stage> for Command {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Simulate => Command::Simulate,
            Stage::Filter => Command::Filter,
            Stage::Smooth => Command::Smooth,
            Stage::Gravity => Command::Gravity,
            Stage::Evaluate => Command::Evaluate,
            Stage::Report => Command::Report,
        }
    }
}

/// Flag, then config, then environment, then 1.
fn resolve_workers(
    flag: Option<usize>,
    config: Option<usize>,
    env: Option<&str>,
) -> Result<usize, Error> {
    let from_env =
        match env {
            Some(v) if !v.trim().is_empty() => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!("{WORKERS_ENV}=`{v}` is not a worker count"))
            })?),
            _ => None,
        };
    let workers = flag.or(config).or(from_env).unwrap_or(1);
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    Ok(workers)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = resolve_workers(cli.workers, cfg.workers, env.as_deref())?;
    let done = run_pipeline(cli.command.into(), &cfg, workers)?;
    for o in &done.manifest.outputs {
        println!("{}", cfg.out.join(&o.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
