//! Internal fan-out helper: one work item per index, results in index order.
//!
//! Callers derive any randomness from the item index, so the parallel and
//! sequential paths produce identical output.

#[cfg(feature = "parallel")]
pub(crate) fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    indexed_map_seq(n, f)
}

/// Always-sequential variant, kept callable so benches can compare both paths.
pub(crate) fn indexed_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
