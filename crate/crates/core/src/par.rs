//! Chunked data-parallel helpers.
//!
//! Work is always split into fixed-size chunks independent of the worker
//! count, and per-chunk results come back in chunk order. Reductions over
//! those results are therefore bit-identical whether the `parallel` feature
//! is enabled or not, and for any thread count.

use std::ops::Range;

/// Rows per chunk for row-blocked matrix work.
pub const ROW_CHUNK: usize = 1024;

fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Apply `f` to consecutive ranges of `0..len`, returning results in range order.
#[cfg(feature = "parallel")]
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    chunk_ranges(len, chunk).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunk_ranges(len, chunk).into_iter().map(f).collect()
}

/// Apply `f` to every index in `0..len`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..len).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..len).map(f).collect()
}

/// Fill `out` in row blocks of `width` elements; `f(row, slot)` writes one row.
#[cfg(feature = "parallel")]
pub fn fill_rows<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    if width == 0 {
        return;
    }
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
pub fn fill_rows<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Cap the global worker pool. Returns false if the pool was already built.
pub fn set_thread_cap(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// Whether this build fans work out across threads.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_exactly() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 4).is_empty());
    }

    #[test]
    fn chunk_results_are_ordered() {
        let sums = map_chunks(100, 7, |r| r.sum::<usize>());
        assert_eq!(sums.iter().sum::<usize>(), 4950);
        assert_eq!(sums[0], (0..7).sum::<usize>());
        let sq = map_indices(5, |i| i * i);
        assert_eq!(sq, vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn fill_rows_writes_each_row() {
        let mut out = vec![0usize; 12];
        fill_rows(&mut out, 3, |i, row| row.iter_mut().for_each(|v| *v = i));
        assert_eq!(out, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }
}
