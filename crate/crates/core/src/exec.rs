//! Bounded worker pool for independent unit tasks. With the `parallel`
//! feature the work runs on a dedicated rayon pool; without it, or with a
//! bound of one, it runs sequentially. Both paths preserve input order, so
//! results are identical either way.

pub const DEFAULT_WORKERS: usize = 8;

pub struct WorkerPool {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = (workers > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("worker pool builds")
            });
            WorkerPool { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        WorkerPool { workers }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Apply `f` to every item, returning outputs in input order.
    pub fn map<T, U, F>(&self, items: Vec<T>, f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> U + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.into_par_iter().map(f).collect());
        }
        items.into_iter().map(f).collect()
    }
}

impl Default for WorkerPool {
    fn default() -> Self {
        Self::new(DEFAULT_WORKERS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_input_order() {
        let pool = WorkerPool::new(8);
        let doubled = pool.map((0..1000).collect(), |x: i64| x * 2);
        assert_eq!(doubled, (0..1000).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_and_pooled_agree() {
        let work = |x: u64| x.wrapping_mul(0x9e3779b9).rotate_left(13);
        let sequential = WorkerPool::new(1).map((0..500).collect(), work);
        let pooled = WorkerPool::new(4).map((0..500).collect(), work);
        assert_eq!(sequential, pooled);
    }

    #[test]
    fn zero_bound_clamps_to_one() {
        assert_eq!(WorkerPool::new(0).workers(), 1);
    }
}
