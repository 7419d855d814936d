//! Thread-count control.
//!
//! Every parallel loop in this crate computes each output element with a
//! fixed sequential reduction, so results are bit-identical regardless of
//! how many workers run them.

use rayon::prelude::*;

/// Environment variable capping the worker count used by [`with_threads`].
pub const THREADS_ENV: &str = "RTPRUNE_THREADS";

/// Below this many scalar operations per call, loops stay on the caller's thread.
const PAR_THRESHOLD: usize = 1 << 14;

/// Reads [`THREADS_ENV`]; unset, empty, zero or unparsable values mean "no cap".
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` inside a dedicated pool of `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> T
where
    F: FnOnce() -> T + Send,
    T: Send,
{
    match threads {
        None => f(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
    }
}

/// `(0..len).map(f).collect()`, parallel when `len * work_per_item` is large.
pub(crate) fn map_indexed<T, F>(len: usize, work_per_item: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if len.saturating_mul(work_per_item) >= PAR_THRESHOLD {
        (0..len).into_par_iter().map(f).collect()
    } else {
        (0..len).map(f).collect()
    }
}
