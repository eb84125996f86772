//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch onto the rayon pool;
//! without it they are plain loops. Results are always returned in index
//! order, so callers that reduce them sequentially stay deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows below this count are processed on the calling thread.
const MIN_PARALLEL_LEN: usize = 32;

/// Evaluates `f(i)` for `i in 0..n`, collecting results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PARALLEL_LEN {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Calls `f(row_index, row)` for every `cols`-wide row of `data`.
pub fn for_each_row_mut<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if data.len() / cols >= MIN_PARALLEL_LEN {
            data.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}
