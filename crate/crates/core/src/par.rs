//! Switch between the rayon worker pool and a plain sequential loop.

/// How a data-parallel kernel should be executed.
///
/// `Parallel` silently degrades to `Sequential` when the crate is built
/// without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

// Below this many destination cells the pool overhead dominates.
const MIN_PARALLEL_LEN: usize = 256;

/// `(0..len).map(f).collect()`, fanned out over the pool when allowed.
pub(crate) fn map_indices<T, F>(len: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode.is_parallel() && len >= MIN_PARALLEL_LEN {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..len).map(f).collect()
}
