//! Configuration-driven convergence studies on top of `fbsde-core`.

pub mod config;
pub mod error;
pub mod study;

use sha2::{Digest, Sha256};

pub use config::{Study, StudyConfig};
pub use error::CliError;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "FBSDE_THREADS";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sizes the global rayon pool from `FBSDE_THREADS`; results do not depend on it.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))
}
