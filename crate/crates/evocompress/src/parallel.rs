//! Fans a batch of candidates out over a fixed-size thread pool. Results come
//! back in input order, so runs stay deterministic for any worker count.

use evocompress_core::evaluator::{Candidate, Evaluator};
use evocompress_core::Error;
use rayon::prelude::*;

pub struct Parallel<E> {
    inner: E,
    pool: rayon::ThreadPool,
}

impl<E: Evaluator + Sync> Parallel<E> {
    pub fn new(inner: E, workers: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .expect("thread pool");
        Parallel { inner, pool }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Evaluator + Sync> Evaluator for Parallel<E> {
    fn accuracy(&self, candidate: Candidate<'_>) -> Result<f64, Error> {
        self.inner.accuracy(candidate)
    }

    fn accuracy_batch(&self, candidates: &[Candidate<'_>]) -> Vec<Result<f64, Error>> {
        self.pool
            .install(|| candidates.par_iter().map(|c| self.inner.accuracy(*c)).collect())
    }
}
