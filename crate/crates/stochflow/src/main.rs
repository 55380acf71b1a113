use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochflow::runner::load_config;
use stochflow::{run_experiment, RunOptions};

/// Stochastic flow experiments.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSVs and manifest.
    Run {
        config: PathBuf,
        /// Output directory, replacing `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 picks one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match load_config(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(CONFIG_ERROR)
            }
        },
        Command::Run {
            config,
            out,
            workers,
            seed_override,
        } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(CONFIG_ERROR);
                }
            };
            let opts = RunOptions {
                out,
                workers,
                seed_override,
            };
            match run_experiment(&cfg, &opts) {
                Ok(outcome) => {
                    for f in &outcome.files {
                        println!("{}", outcome.dir.join(f).display());
                    }
                    ExitCode::SUCCESS
                }
                Err(stochflow::RunError::Config(e)) => {
                    eprintln!("config error: {e}");
                    ExitCode::from(CONFIG_ERROR)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(RUNTIME_ERROR)
                }
            }
        }
    }
}
