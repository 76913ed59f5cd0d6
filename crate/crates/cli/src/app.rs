//! Command-line surface.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{parse_config, ExperimentConfig};
use crate::experiment::{run_experiment, threads_from_env, RunError};
use crate::verify::{self, Check};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mtl-balance",
    version,
    about = "Scale-invariant multi-task balancing experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Run this seed only (overrides `seeds` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Print failures and errors only.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every configured cell and seed.
    Run { config: PathBuf },
    /// Like `run`, but the config must define at least one sweep axis.
    Sweep { config: PathBuf },
    /// Run a verifier suite.
    Verify {
        suite: Suite,
        /// Directory holding cityscapes.toml and nyuv2.toml (tables only).
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Prop1,
    Prop2,
    Tables,
}

pub fn execute(cli: Cli) -> u8 {
    match &cli.command {
        Command::Run { config } => experiment(&cli, config, false),
        Command::Sweep { config } => experiment(&cli, config, true),
        Command::Verify { suite, fixtures } => {
            let checks = match suite {
                Suite::Prop1 => verify::prop1(),
                Suite::Prop2 => verify::prop2(),
                Suite::Tables => match verify::tables(fixtures.as_deref()) {
                    Ok(c) => c,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_CONFIG;
                    }
                },
            };
            report(&checks, cli.quiet)
        }
    }
}

fn report(checks: &[Check], quiet: bool) -> u8 {
    for c in checks {
        if !quiet || !c.passed {
            println!("{}", c.line());
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if !quiet || failed > 0 {
        println!("{} checks, {failed} failed", checks.len());
    }
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}

/// Reads and parses a config file, then applies the command-line overrides.
pub fn load_config(
    path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut config = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(o) = out {
        config.out = o.to_path_buf();
    }
    if let Some(s) = seed {
        config.seeds = vec![s];
    }
    crate::config::validate(&config).map_err(|(p, m)| format!("{p}: {m}"))?;
    Ok(config)
}

fn experiment(cli: &Cli, path: &Path, require_axes: bool) -> u8 {
    let config = match load_config(path, cli.out.as_deref(), cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if require_axes && config.sweep.is_empty() {
        eprintln!(
            "error: {}: sweep needs at least one axis under [sweep]",
            path.display()
        );
        return EXIT_CONFIG;
    }
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&config, threads, cli.quiet) {
        Ok(outcome) => {
            if !cli.quiet {
                println!(
                    "wrote {} traces and {} summaries to {}",
                    outcome.trace_files.len(),
                    outcome.summaries.len(),
                    outcome.out_dir.display()
                );
            }
            EXIT_OK
        }
        Err(e @ RunError::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e @ RunError::Divergence { .. }) => {
            eprintln!("error: {e}");
            EXIT_DIVERGED
        }
    }
}
