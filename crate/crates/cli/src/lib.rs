//! Configuration, orchestration and output of pricing experiments.

pub mod config;
mod error;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use runner::{format_table, run, sweep, ResultRow};

/// Worker count from `PRICE_WORKERS`, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var("PRICE_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Invalid(format!("PRICE_WORKERS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
