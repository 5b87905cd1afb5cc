use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hipinn_cli::{expand, load_config, load_summaries, report, run_experiments, worker_count, write_report};

#[derive(Parser)]
#[command(name = "hipinn", version, about = "Hierarchical PINN experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every run of a config.
    Run {
        config: PathBuf,
        /// Sweep directory; overrides the config's `output`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parse and validate a config, listing its runs.
    Validate { config: PathBuf },
    /// Regenerate the comparison table of a finished sweep.
    Report { sweep_dir: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, output } => {
            let cfg = load_config(&config)?;
            let dir = output.unwrap_or_else(|| cfg.output.clone());
            let workers = worker_count(&cfg)?;
            let outcome = run_experiments(&cfg, &dir, workers)?;
            print!("{}", report(&outcome.summaries).to_text());
            println!("outputs in {}", outcome.dir.display());
            Ok(if outcome.all_completed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let plans = expand(&cfg)?;
            println!("{}: valid, {} run(s)", config.display(), plans.len());
            for p in &plans {
                println!("  {}  seed {}  {} iterations  {}", p.id, p.seed, p.schedule.total_iterations(), &p.config_hash[..12]);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { sweep_dir } => {
            let summaries = load_summaries(&sweep_dir)?;
            write_report(&sweep_dir, &summaries)?;
            print!("{}", report(&summaries).to_text());
            Ok(ExitCode::SUCCESS)
        }
    }
}
