//! Numerical substrate: matrices, reverse-mode autodiff, optimization.
//!
//! Everything runs in `f64`. Kernels parallelize over output rows when the
//! work is large enough; each output element keeps a fixed sequential
//! reduction order, so results are bit-identical regardless of thread count.
//! The `LTE4G_THREADS` environment variable caps the worker pool.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use dense::DenseMat;
pub use sparse::SparseMat;
pub use tape::{Gradients, NodeId, Tape};

use std::sync::Once;

static POOL_INIT: Once = Once::new();

/// Builds the global worker pool once, honoring `LTE4G_THREADS` when set.
///
/// Called by the row-parallel kernels before their first dispatch. A second
/// call (or a pool installed by the host process) is a no-op.
pub(crate) fn ensure_thread_pool() {
    POOL_INIT.call_once(|| {
        if let Ok(raw) = std::env::var("LTE4G_THREADS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                if n >= 1 {
                    // An Err here means a global pool already exists, which
                    // is fine: the cap is best-effort.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    });
}

/// Minimum number of output elements before a kernel bothers going parallel.
pub(crate) const PAR_THRESHOLD: usize = 16 * 1024;
