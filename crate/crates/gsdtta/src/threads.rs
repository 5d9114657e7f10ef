//! Thread-pool scoping for the batch-parallel regions.
//!
//! Every parallel region in this crate is a per-cloud map whose results are
//! collected in input order and reduced sequentially, so the numeric output
//! is independent of the worker count. This module only controls how many
//! workers carry out those maps.

use crate::error::{Error, Result};

/// Runs `f` inside a rayon pool with `threads` workers. `None` uses the
/// available parallelism. `Some(1)` must produce bit-identical results to
/// the default; parallel regions in this crate keep that contract by
/// reducing in input order.
pub fn with_thread_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::InvalidInput("thread count must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("failed to build thread pool: {e}")))?;
    Ok(pool.install(f))
}
