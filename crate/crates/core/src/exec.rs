//! Replicate scheduling.
//!
//! With the `parallel` feature the replicate loop runs on rayon's pool;
//! without it (or with [`ExecMode::Sequential`]) it is a plain iterator.
//! Results always come back in replicate order, so downstream folds are
//! deterministic either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this build can actually run in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Map `f` over `0..n`, collecting in index order.
pub fn map_indexed<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Run `f` over `0..n` and fold with an associative `combine` in index order.
pub fn map_reduce<R, F, C>(mode: ExecMode, n: usize, identity: R, f: F, combine: C) -> R
where
    R: Send + Clone,
    F: Fn(usize) -> R + Sync + Send,
    C: Fn(R, R) -> R + Sync + Send,
{
    map_indexed(mode, n, f).into_iter().fold(identity, combine)
}

/// Set the global worker count. Only the first call has any effect.
pub fn configure_workers(workers: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(w) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}
