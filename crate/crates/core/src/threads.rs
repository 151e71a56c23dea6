//! Worker-thread configuration. Every parallel kernel in the crate splits
//! work into fixed chunks whose results are merged in chunk order, so output
//! never depends on the thread count chosen here.

use crate::{FilmError, Result};

pub const THREADS_ENV: &str = "FILMGRADE_THREADS";

/// Reads `FILMGRADE_THREADS`; `None` when unset or empty.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| {
                FilmError::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
            }),
        Err(_) => Ok(None),
    }
}

/// Builds a pool with `threads` workers (rayon's default when `None`).
pub fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| FilmError::InvalidArgument(format!("thread pool: {e}")))
}
