//! Execution strategy for the row-parallel kernels.
//!
//! Work is always split into fixed-size chunks whose partial results are
//! combined in chunk order, so the sequential and parallel paths produce
//! bitwise-identical floating-point results regardless of thread count.

use std::ops::Range;

/// Rows per work unit for row-wise reductions.
pub const ROW_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs sequentially.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Splits `0..n` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Applies `f` to every chunk of `0..n` and returns the results in chunk order.
pub fn map_chunks<R, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    map_items(exec, chunk_ranges(n, chunk), f)
}

/// Applies `f` to each item, preserving order.
pub fn map_items<T, R, F>(exec: Exec, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = exec;
    items.into_iter().map(f).collect()
}

/// Chunked sum of `f(i)` over `0..n` with a deterministic reduction order.
pub fn sum_rows<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_chunks(exec, n, ROW_CHUNK, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 4).is_empty());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let a = sum_rows(Exec::Sequential, 100_000, f);
        let b = sum_rows(Exec::Parallel, 100_000, f);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
