use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use price_cli::{format_table, run, sweep, workers_from_env, ExperimentConfig};
use tt_bermudan::selfcheck;

/// Bermudan option prices from tensor-train regression and dual bounds.
#[derive(Parser)]
#[command(name = "price", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price the configured cell and write results, ranks and a manifest.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price every (dimension, degree) cell of the `[sweep]` section.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the desk-scale property checks.
    Check,
}

fn execute(cli: Cli) -> price_cli::Result<bool> {
    if let Some(n) = workers_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| price_cli::CliError::Invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let rows = run(&cfg, &dir).inspect_err(|_| {
                eprintln!("partial outputs and optimizer trace in {}", dir.join("cg_trace.csv").display());
            })?;
            print!("{}", format_table(&rows));
            println!("results written to {}", dir.display());
            Ok(true)
        }
        Command::Sweep { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            let rows = sweep(&cfg, &dir)?;
            print!("{}", format_table(&rows));
            println!("results written to {}", dir.display());
            Ok(true)
        }
        Command::Check => {
            let outcomes = selfcheck::run_all();
            for o in &outcomes {
                println!(
                    "{} {:<32} {:>8.2}s  {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.elapsed.as_secs_f64(),
                    o.detail
                );
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
