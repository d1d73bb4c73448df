use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lqg_rl::cli::{self, RunOptions};
use lqg_rl::Error;

/// Reinforcement-learning control of linear-quadratic-Gaussian systems.
///
/// Without a subcommand, runs the workflow selected by the JSON config
/// (solve, filter, learn or eval) and writes its artifacts to the output
/// directory.
#[derive(Parser)]
#[command(name = "lqg-rl", version, subcommand_negates_reqs = true)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, required = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    output: Option<PathBuf>,

    /// Seed override; beats every seed in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the Pi matrices of two result documents.
    Compare {
        /// Learned result document (JSON with a "Pi" key).
        learned: PathBuf,
        /// Oracle result document.
        oracle: PathBuf,
    },
}

fn real_main(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Some(Command::Compare { learned, oracle }) => {
            let report = cli::compare(&learned, &oracle)?;
            println!("frobenius_error: {}", report.frobenius_error);
            println!("relative_error: {}", report.relative_error);
            println!("max_abs_deviation: {}", report.max_abs_deviation);
            Ok(())
        }
        None => cli::run(&RunOptions {
            config_path: cli.config.clone().expect("clap enforces --config"),
            output: cli.output.clone(),
            seed: cli.seed,
            quiet: cli.quiet,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
