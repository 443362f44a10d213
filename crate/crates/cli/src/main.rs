mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{Run, Status};
use config::RunConfig;

/// Steklov eigenvalues, quasimodes and nodal sets on circular domains.
#[derive(Parser)]
#[command(name = "steklov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fourier truncation per circle, overriding the configuration.
    #[arg(long)]
    m_max: Option<usize>,
    /// Random seed for sampled checks.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Select {
    /// Eigenfunction index.
    #[arg(long, conflicts_with = "all")]
    n: Option<usize>,
    /// Every computed eigenfunction.
    #[arg(long)]
    all: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the eigenvalue problem and compare with the sloshing sequence.
    Spectrum(Common),
    /// Defects, cluster decomposition and residual rates.
    Quasimode(Common),
    /// Trace nodal sets and write SVG pictures.
    Nodal {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Select,
    },
    /// Sup-norm decay away from each boundary circle.
    Decay {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Select,
    },
    /// Cross-check the solver against the closed-form annulus spectrum.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Inner radius of the annulus.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Largest angular mode checked.
        #[arg(long, default_value_t = 20)]
        k_max: usize,
    },
    /// All stages combined into one summary.
    Report(Common),
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(m) = c.m_max {
        cfg.m_max = m;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.check()?;
    Ok(cfg)
}

fn threads() -> Result<()> {
    if let Ok(v) = std::env::var("STEKLOV_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("STEKLOV_THREADS = `{v}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Status> {
    threads()?;
    match cli.command {
        Command::Spectrum(c) => commands::spectrum(&Run::new(load(&c)?)?),
        Command::Quasimode(c) => commands::quasimode(&Run::new(load(&c)?)?),
        Command::Nodal { common, select } => commands::nodal(&Run::new(load(&common)?)?, select.n, select.all),
        Command::Decay { common, select } => commands::decay(&Run::new(load(&common)?)?, select.n, select.all),
        Command::Oracle { common, eps, k_max } => commands::oracle(&load(&common)?, eps, k_max),
        Command::Report(c) => commands::report(&Run::new(load(&c)?)?),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Ok(Status::Spurious) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
