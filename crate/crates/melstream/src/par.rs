//! Thin dispatch layer between rayon and sequential execution.
//!
//! Every parallel loop in this crate writes disjoint output slots or collects
//! results in index order, so the `parallel` feature changes wall-clock time
//! only, never results. Building with `--no-default-features` removes the
//! rayon dependency entirely and runs the same loops sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to disjoint chunks of length `chunk_len`, indexed by chunk.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T: Send, F>(data: &mut [T], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
