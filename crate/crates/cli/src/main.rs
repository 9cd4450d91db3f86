use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "filfl",
    about = "Deterministic federated-learning simulator with greedy client filtering",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write per-round metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare both filter modes against the exhaustive optimum.
    FilterBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit the weak-submodularity verified-percentage table.
    SubmodCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report per-client class histograms for the configured task.
    PartitionInspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => filfl_cli::cmd_run(&config, &out, seed),
        Command::FilterBench { config, out, seed } => {
            filfl_cli::cmd_filter_bench(&config, &out, seed)
        }
        Command::SubmodCheck { config, out, seed } => {
            filfl_cli::cmd_submod_check(&config, &out, seed)
        }
        Command::PartitionInspect { config, out, seed } => {
            filfl_cli::cmd_partition_inspect(&config, &out, seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code as u8)
        }
    }
}
