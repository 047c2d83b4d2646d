//! `proplimit`: batch runner for propagation-limit experiments.
//!
//! Exit codes: 0 success, 2 parameter error, 3 data error, 4 accuracy error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use propagation_limit::{ErrorClass, Exec};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "proplimit", version, about = "Poisson-limit experiments for cellular propagation losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Marked propagation-process samples (CSV + meta JSON per replication).
    Simulate,
    /// Per-sigma convergence diagnostics.
    Convergence,
    /// Critical shadowing over a (beta, N) grid of hexagonal networks.
    CriticalSigma,
    /// Network vs limit-model SIR distributions.
    SirCompare,
    /// Path-loss exponent regression on measured strongest-signal losses.
    Fit,
}

trait Seeded {
    fn set_seed(&mut self, seed: u64);
}

macro_rules! seeded {
    ($($t:ty),*) => {$(
        impl Seeded for $t {
            fn set_seed(&mut self, seed: u64) {
                self.seed = seed;
            }
        }
    )*};
}

seeded!(
    config::SimulateConfig,
    config::ConvergenceConfig,
    config::CriticalSigmaConfig,
    config::SirCompareConfig,
    config::FitConfig
);

fn load<T: DeserializeOwned + Seeded>(common: &Common) -> Result<T> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| propagation_limit::Error::Parameter("--config is required".into()))?;
    let mut cfg: T = config::load(path)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let out: &Path = &cli.common.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let exec = Exec::Parallel;
    match cli.command {
        Command::Simulate => commands::simulate(&load(&cli.common)?, out, exec),
        Command::Convergence => commands::convergence(&load(&cli.common)?, out, exec),
        Command::CriticalSigma => commands::critical_sigma(&load(&cli.common)?, out, exec),
        Command::SirCompare => commands::sir_compare(&load(&cli.common)?, out, exec),
        Command::Fit => commands::fit(&load(&cli.common)?, out),
    }
}

#[cfg(feature = "parallel")]
fn with_workers(workers: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("building worker pool")?
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers(_workers: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    f()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err
        .chain()
        .find_map(|e| e.downcast_ref::<propagation_limit::Error>());
    match core.map(|e| e.class()) {
        Some(ErrorClass::Parameter) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Accuracy) => 4,
        // Unreadable or malformed configs.
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_workers(cli.common.workers, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
