//! Data-parallel helpers with a sequential fallback.
//!
//! Built with the `parallel` feature (default), these dispatch to rayon when
//! `parallel == true`; without the feature they always run sequentially.
//! Results are collected in input order, so parallel and sequential runs are
//! bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, collecting results in input order.
#[cfg(feature = "parallel")]
pub fn map_collect<T: Sync, U: Send>(
    items: &[T],
    parallel: bool,
    f: impl Fn(&T) -> U + Sync + Send,
) -> Vec<U> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U>(items: &[T], _parallel: bool, f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indices<U: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<U>(n: usize, _parallel: bool, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

/// True when the crate was built with rayon support.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
