//! Data-parallel execution over fixed-size chunks.
//!
//! Every batch computation in the crate is split into chunks of a fixed
//! size that does not depend on the worker count. Partial results are
//! reduced in chunk order, so sequential and parallel execution produce
//! bit-identical output.

/// Rows per work unit for batched evaluation.
pub const CHUNK_ROWS: usize = 128;

/// How batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Uses the ambient rayon pool. Falls back to sequential execution when
    /// the crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        }
    }
}

/// Splits `0..n` into `[start, end)` chunk ranges of `chunk` rows.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|i| (i * chunk, ((i + 1) * chunk).min(n)))
        .collect()
}

/// Maps `f` over chunk ranges of `0..n`, returning results in chunk order.
pub fn map_chunks<T, F>(mode: ExecMode, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let ranges = chunk_ranges(n, chunk);
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if ranges.len() > 1 => {
            use rayon::prelude::*;
            ranges.into_par_iter().map(|(a, b)| f(a, b)).collect()
        }
        _ => ranges.into_iter().map(|(a, b)| f(a, b)).collect(),
    }
}

/// Maps `f` over items, preserving order.
pub fn map_items<I, T, F>(mode: ExecMode, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if items.len() > 1 => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Applies `f` to disjoint mutable chunks of `out`, each of `chunk` elements.
/// `f` receives the index of the first element of its chunk.
pub fn for_each_chunk_mut<T, F>(mode: ExecMode, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if out.len() > chunk => {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i * chunk, c));
        }
        _ => out
            .chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c)),
    }
}
