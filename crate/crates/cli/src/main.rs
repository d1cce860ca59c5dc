use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use metts_cli::compare::compare;
use metts_cli::config::parse_boundary;
use metts_cli::oracle::oracle_table;
use metts_cli::{run, RunConfig, RunOptions};
use metts_core::ensemble::uniform_grid;
use metts_core::io::read_curve;

/// Finite-temperature XY chain energies from ensembles of neural
/// wavefunctions.
#[derive(Parser)]
#[command(name = "metts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve an ensemble and write member artifacts, curve and manifest.
    Run {
        /// TOML run configuration.
        config: PathBuf,
        /// Override a config field, e.g. `--set ensemble.n_states=50`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides `output.directory`).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Worker threads (default: $METTS_WORKERS, then the CPU count).
        #[arg(long, short)]
        workers: Option<usize>,
        /// Suppress per-member progress.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Print exact thermal energies on a β grid.
    Oracle {
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 0.0)]
        beta_start: f64,
        #[arg(long, default_value_t = 3.0)]
        beta_stop: f64,
        #[arg(long, default_value_t = 0.05)]
        beta_step: f64,
        /// Add an exact-diagonalization column (N ≤ 12).
        #[arg(long)]
        ed: bool,
    },
    /// Compare a curve file with the exact energies.
    Compare {
        /// Curve file written by `metts run`.
        curve: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
    },
}

#[derive(clap::Args)]
struct ChainArgs {
    /// Number of sites.
    #[arg(long, short)]
    n_sites: usize,
    /// `open` or `periodic`.
    #[arg(long, default_value = "periodic")]
    boundary: String,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            mut overrides,
            output,
            workers,
            quiet,
        } => {
            if let Some(dir) = output {
                overrides.push(format!("output.directory={:?}", dir.display().to_string()));
            }
            let cfg = RunConfig::load_with_overrides(&config, &overrides)
                .with_context(|| format!("loading {}", config.display()))?;
            let summary = run(&cfg, &RunOptions { workers, quiet })?;
            println!(
                "wrote {} ({} members computed, {} reused)",
                summary.curve_path().display(),
                summary.computed,
                summary.reused
            );
            Ok(())
        }
        Command::Oracle {
            chain,
            beta_start,
            beta_stop,
            beta_step,
            ed,
        } => {
            let boundary = parse_boundary(&chain.boundary)?;
            let grid = uniform_grid(beta_start, beta_stop, beta_step)?;
            print!("{}", oracle_table(chain.n_sites, boundary, &grid, ed)?);
            Ok(())
        }
        Command::Compare { curve, chain } => {
            let boundary = parse_boundary(&chain.boundary)?;
            let file =
                File::open(&curve).with_context(|| format!("opening {}", curve.display()))?;
            let c = read_curve(BufReader::new(file))
                .with_context(|| format!("reading {}", curve.display()))?;
            print!("{}", compare(&c, chain.n_sites, boundary)?);
            Ok(())
        }
    }
}
