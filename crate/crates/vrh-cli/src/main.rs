//! `vrh`: hopping-transport pipelines behind one reproducible front end.
//!
//! Every subcommand reads a key=value config file, derives all randomness
//! from the single `seed` key, writes artifacts atomically, and prints a
//! one-line JSON summary. Reruns of the same config are byte-identical.
//! Exit codes: 0 ok, 1 runtime failure, 2 bad configuration, 3 quality
//! flags raised under --strict.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::KvFile;
use run::{CliError, Outcome};

#[derive(Parser)]
#[command(
    name = "vrh",
    about = "Hopping-transport simulation and analysis pipelines",
    after_help = "Set RAYON_NUM_THREADS to bound the worker pool; results do not \
                  depend on it. All outputs are reproducible from (config, seed)."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Exit nonzero (code 3) if any quality flag is raised.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample marked point environments and write them as .points files.
    GenEnv {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the diffusion coefficient by event-driven random walks.
    Walk {
        #[arg(long)]
        config: PathBuf,
    },
    /// Estimate the periodized resistor-network diffusion coefficient.
    Network {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pick domination scales and scan crossing counts over box sizes.
    Percolation {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full low-temperature sweep: walks, networks, chain bound, fits.
    Mott {
        #[arg(long)]
        config: PathBuf,
    },
    /// Quick deterministic exercise of every module.
    Selftest,
}

fn load(path: &PathBuf) -> Result<KvFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    KvFile::parse(&text).map_err(CliError::Config)
}

fn dispatch(cmd: Cmd) -> Result<Outcome, CliError> {
    match cmd {
        Cmd::GenEnv { config } => run::gen_env(load(&config)?),
        Cmd::Walk { config } => run::walk(load(&config)?),
        Cmd::Network { config } => run::network(load(&config)?),
        Cmd::Percolation { config } => run::percolation(load(&config)?),
        Cmd::Mott { config } => run::mott(load(&config)?),
        Cmd::Selftest => run::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if cli.strict && !outcome.flags.is_empty() {
                eprintln!("strict: flags raised: {}", outcome.flags.join(", "));
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
