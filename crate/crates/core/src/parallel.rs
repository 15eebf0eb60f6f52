//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) batch work fans out over rayon's pool.
//! Results are always collected by index, so output never depends on thread
//! count or completion order.

/// How batch work (per-sample gradients, per-image projections, per-image
/// metrics) is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// Rayon's global pool; same as `Sequential` without the `parallel` feature.
    #[default]
    Parallel,
}

impl Parallelism {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// `f(i, &items[i])` for every item, results in input order.
pub fn map_indexed<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// `f(i)` for `i in 0..n`, results in index order.
pub fn map_range<R, F>(n: usize, mode: Parallelism, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(&f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}
