//! Path-level parallelism is injected here so the core stays `no_std`.

use alloc::vec::Vec;

/// Runs independent per-path jobs. Results come back in index order, so any
/// reduction over them is independent of scheduling.
pub trait PathExecutor: Sync {
    fn map_paths<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every job on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl PathExecutor for Sequential {
    fn map_paths<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).map(job).collect()
    }
}
