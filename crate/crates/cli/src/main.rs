use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use labelshift::error::Error;
use labelshift::experiment::{run_to_files, summary_path, ExperimentConfig};
use log::error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "labelshift",
    version,
    about = "Label-shift importance weight experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key = value config file.
    Run {
        config: PathBuf,
        /// CSV output path; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds; override `seeds` in the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Only report errors.
        #[arg(long)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run {
        config,
        out,
        seeds,
        quiet,
    } = cli.command;
    let level = if quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut cfg = match ExperimentConfig::from_file(&config) {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("{}: {e}", config.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
        if let Err(e) = cfg.validate() {
            error!("--seeds: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let path = out.unwrap_or_else(|| cfg.output.clone());
    match run_to_files(&cfg, &path) {
        Ok(rows) => {
            if !quiet {
                println!("wrote {} rows to {}", rows.len(), path.display());
                println!("summary in {}", summary_path(&path).display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Config { .. } | Error::Io(_))) => {
            error!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            error!("numerical failure: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
