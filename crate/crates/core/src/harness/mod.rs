//! Metrics, experiment orchestration, configuration and report export.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;

use crate::error::{Error, Result};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "FEDPOISON_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] when set. Returns the
/// number of worker threads in use.
pub fn configure_threads() -> Result<usize> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already initialized: {e}");
        }
    }
    Ok(rayon::current_num_threads())
}
