//! Sequential / data-parallel execution of row-independent work.
//!
//! Every parallel path splits work only along axes whose elements are
//! computed independently, with each element's own reduction running in a
//! fixed order. Results are therefore bit-identical between [`Exec::Sequential`]
//! and [`Exec::Parallel`]. Without the `parallel` feature the parallel
//! schedule falls back to the sequential one.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Calls `f(row_index, row)` for every `row_len`-sized chunk of `out`.
    pub fn for_each_row<T, F>(self, out: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Send + Sync,
    {
        if row_len == 0 {
            return;
        }
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => out.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row)),
            _ => out.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row)),
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<I, R, F>(self, items: Vec<I>, f: F) -> Vec<R>
    where
        I: Send,
        R: Send,
        F: Fn(I) -> R + Send + Sync,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.into_par_iter().map(f).collect(),
            _ => items.into_iter().map(f).collect(),
        }
    }
}

/// Caps the global worker pool. Has no effect without the `parallel`
/// feature, or once the pool has already been initialised.
pub fn init_thread_pool(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}
