//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper writes results in index order and never reduces across
//! items, so the output is identical whichever mode runs it. Reductions are
//! left to the caller and always happen sequentially.

/// Execution mode for per-item work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is compiled in, otherwise
    /// silently behaves like `Sequential`.
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

/// Minimum items per rayon task; below this the split overhead dominates.
const MIN_CHUNK: usize = 32;

impl Exec {
    /// `out[i] = f(i)` for every index.
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if n >= 2 * MIN_CHUNK => {
                use rayon::prelude::*;
                (0..n).into_par_iter().with_min_len(MIN_CHUNK).map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Applies `f(i, item)` to every element in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if items.len() >= 2 * MIN_CHUNK => {
                use rayon::prelude::*;
                items
                    .par_iter_mut()
                    .with_min_len(MIN_CHUNK)
                    .enumerate()
                    .for_each(|(i, x)| f(i, x));
            }
            _ => items.iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
        }
    }

    /// Processes fixed-size row blocks of `out` (each `row_len` wide) in
    /// place; `f` receives the first row index of the block. Block boundaries
    /// depend only on `block_rows`, never on the thread count.
    pub fn for_each_block<F>(self, out: &mut [f64], row_len: usize, block_rows: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let width = row_len * block_rows;
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if out.len() > width => {
                use rayon::prelude::*;
                out.par_chunks_mut(width)
                    .enumerate()
                    .for_each(|(b, chunk)| f(b * block_rows, chunk));
            }
            _ => out
                .chunks_mut(width)
                .enumerate()
                .for_each(|(b, chunk)| f(b * block_rows, chunk)),
        }
    }
}
