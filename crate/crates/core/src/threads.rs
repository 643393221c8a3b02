//! Scoped worker pools.
//!
//! Parallel regions (per-sample convolution, frame rendering) use the
//! current rayon pool. Results never depend on the worker count: every
//! reduction runs in a fixed order on one thread.

use crate::error::{Error, Result};

/// Runs `f` on a fresh pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::InvalidArgument(
            "thread count must be at least 1".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| {
            Error::InvalidArgument(format!("cannot start {threads} worker threads: {e}"))
        })?;
    Ok(pool.install(f))
}
