//! Thread-pool [`PathExecutor`]. Results are collected in index order, so
//! output never depends on the worker count.

use rayon::prelude::*;
use stochflow_core::exec::PathExecutor;

pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `workers = 0` lets rayon pick the thread count.
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl PathExecutor for RayonExecutor {
    fn map_paths<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..count).into_par_iter().map(job).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stochflow_core::exec::Sequential;

    #[test]
    fn order_matches_sequential() {
        let job = |i: usize| (i as f64).sqrt().to_bits() ^ (i as u64 * 0x9e37_79b9);
        let seq = Sequential.map_paths(1000, job);
        for w in [1, 3, 8] {
            assert_eq!(RayonExecutor::new(w).unwrap().map_paths(1000, job), seq);
        }
    }
}
