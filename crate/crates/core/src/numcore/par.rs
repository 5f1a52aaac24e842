//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! rayon pool; without it they run in index order on the calling thread.
//! Callers only use them for per-item work whose results are combined in
//! index order, so both paths produce bit-identical outputs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f(i, chunk_i)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// `(0..n).map(f).collect()` with results kept in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Whether this build fans out over threads.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
