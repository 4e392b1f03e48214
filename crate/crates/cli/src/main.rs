use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use confes_cli::run::Overrides;
use confes_cli::{bounds, compare, manifest, run, CliError};

#[derive(Parser)]
#[command(
    name = "confes",
    version,
    about = "Label-noise experiments with confidence-error sieving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Output directory, replacing `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed_override,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured methods over the seed list.
    Run(Common),
    /// Monte-Carlo sweep of the error bounds.
    Bounds(Common),
    /// Summarise finished runs as mean +- std per (method, noise).
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the summary CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-hash the artifacts listed in a run's manifest.
    Verify { dir: PathBuf },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => {
            let dir = run::run_experiment(&c.config, &c.overrides())?;
            println!("{}", dir.display());
        }
        Command::Bounds(c) => {
            let dir = bounds::run_bounds(&c.config, &c.overrides())?;
            println!("{}", dir.display());
        }
        Command::Compare { dirs, out } => {
            let cells = compare::collect(&dirs)?;
            if let Some(path) = out {
                std::fs::write(&path, compare::to_csv(&cells))
                    .map_err(|e| CliError::io(&path, e))?;
            }
            print!("{}", compare::to_table(&cells));
        }
        Command::Verify { dir } => {
            let n = manifest::verify(&dir)?;
            println!("{n} artifacts ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
