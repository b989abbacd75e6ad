//! Command-line front end for `isingrisk`: file formats and subcommands.

pub mod commands;
pub mod error;
pub mod formats;

pub use commands::{run, Cli, Command, Outcome};
pub use error::{exit, CliError};

/// Environment variable overriding the worker-thread count.
pub const THREADS_ENV: &str = "ISINGRISK_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::input(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))
}
