//! `sks`: run single paths, ensembles and particle systems from a flat
//! config file, or check the built-in invariants.
//!
//! Exit codes: 0 success, 1 config or input error, 2 internal error, 3 verify
//! failure.

mod commands;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sks_core::io::RunConfig;
use sks_core::Error;

#[derive(Parser)]
#[command(name = "sks", version, about = "Stochastic Keller-Segel laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value config; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the ensemble size.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Print only errors and failures.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// One path: diagnostics CSV, optional snapshots, blowup report.
    Simulate,
    /// The configured experiment over many paths.
    Ensemble,
    /// The interacting particle system.
    Particles,
    /// Built-in invariant checks; exits 3 if any fails.
    Verify,
}

fn load(cli: &Cli) -> sks_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &cli.out {
        let out = out.to_str().ok_or_else(|| Error::Config("output path is not UTF-8".into()))?;
        cfg.set("out", out)?;
    }
    if let Some(paths) = cli.paths {
        cfg.set("paths", &paths.to_string())?;
    }
    Ok(cfg)
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::InvalidDomain(_)
            | Error::Precondition(_)
            | Error::Snapshot(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("sks: {e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate => commands::simulate(&cfg, cli.quiet),
        Command::Ensemble => commands::ensemble(&cfg, cli.quiet),
        Command::Particles => commands::particles(&cfg, cli.quiet),
        Command::Verify => verify::run(&cfg, cli.quiet).map(|ok| if ok { 0 } else { 3 }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sks: {e}");
            ExitCode::from(if is_config_error(&e) { 1 } else { 2 })
        }
    }
}
