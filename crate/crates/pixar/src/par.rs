//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these fan work out over rayon;
//! without it they degrade to plain iterators. Both variants return results
//! in input order, and callers that reduce floating-point sums do so over
//! fixed-size chunks combined in chunk order, so outputs are byte-identical
//! regardless of thread count or scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Ordered map over a slice.
#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send, F: Fn(&T) -> U + Sync + Send>(items: &[T], f: F) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U, F: Fn(&T) -> U>(items: &[T], f: F) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Ordered map over fixed-size chunks of a slice. Chunk boundaries depend
/// only on `chunk`, never on thread count.
#[cfg(feature = "parallel")]
pub fn map_chunks<T: Sync, U: Send, F: Fn(&[T]) -> U + Sync + Send>(
    items: &[T],
    chunk: usize,
    f: F,
) -> Vec<U> {
    items.par_chunks(chunk.max(1)).map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, U, F: Fn(&[T]) -> U>(items: &[T], chunk: usize, f: F) -> Vec<U> {
    items.chunks(chunk.max(1)).map(|c| f(c)).collect()
}

/// Ordered map over an index range.
#[cfg(feature = "parallel")]
pub fn map_range<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}
