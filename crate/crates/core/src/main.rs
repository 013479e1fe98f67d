use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tramfl::config::parse_config;
use tramfl::experiment::{run_experiment, RunOptions};
use tramfl::Error;

#[derive(Parser)]
#[command(
    name = "tramfl",
    version,
    about = "Traveling-model federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy of an experiment config and write results.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip a header line in CSV datasets.
        #[arg(long)]
        csv_header: bool,
        /// Write the final model of the first policy's first trial.
        #[arg(long)]
        dump_model: Option<PathBuf>,
        /// Count each gossip exchange as one transmission instead of two.
        #[arg(long)]
        count_exchanges_once: bool,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        csv_header,
        dump_model,
        count_exchanges_once,
    } = Cli::parse().command;

    let cfg = match parse_config(&config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("tramfl: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let opts = RunOptions {
        csv_header,
        dump_model,
        count_exchanges_once,
        quiet: false,
    };
    match run_experiment(&cfg, &out, &opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => {
            eprintln!("tramfl: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("tramfl: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
