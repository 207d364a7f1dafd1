//! `pmd-lab`: run policy mirror descent experiments and summarise trajectory CSVs.
//!
//! Exit status is 0 on success, 1 when any bound check fails and 2 on invalid
//! input (unreadable or malformed configs and CSVs, unwritable output paths).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pmd_core::experiment::{self, ExperimentConfig};

const EXIT_VIOLATION: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "pmd-lab", version, about = "Exact tabular policy mirror descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every method of a config plus a value-iteration baseline.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_path`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress the summary on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Summarise trajectory CSVs and fail on recorded bound violations.
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

fn run(config_path: PathBuf, out: Option<PathBuf>, seed: Option<u64>, quiet: bool) -> anyhow::Result<usize> {
    let text =
        std::fs::read_to_string(&config_path).with_context(|| format!("cannot read {}", config_path.display()))?;
    let mut config =
        ExperimentConfig::parse(&text).with_context(|| format!("invalid config {}", config_path.display()))?;
    if let Some(out) = out {
        config.output_path = out;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let summary = experiment::run_experiment(&config)?;
    if !quiet {
        print!("{}", summary.text);
    }
    Ok(summary.violations())
}

fn summarize(paths: Vec<PathBuf>, quiet: bool) -> anyhow::Result<usize> {
    let summary = experiment::summarize(&paths)?;
    if !quiet {
        print!("{}", summary.text);
    }
    Ok(summary.violations())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            quiet,
        } => run(config, out, seed, quiet),
        Command::Summarize { csv, quiet } => summarize(csv, quiet),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("pmd-lab: {n} bound violation(s)");
            ExitCode::from(EXIT_VIOLATION)
        }
        Err(e) => {
            eprintln!("pmd-lab: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
