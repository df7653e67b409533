//! Sequential/parallel execution switch for per-item work.
//!
//! With the `parallel` feature, [`Execution::Parallel`] maps over items on
//! the rayon global pool. Without it, both modes run on the calling thread.
//! Either way results come back in input order, so output never depends on
//! the mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f(index, item)` over `items`, preserving order.
pub fn map_indexed<T, R, F>(items: &[T], mode: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Like [`map_indexed`] for fallible work; returns the error of the lowest
/// failing index.
pub fn try_map_indexed<T, R, E, F>(items: &[T], mode: Execution, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    map_indexed(items, mode, f).into_iter().collect()
}
