//! Switch between rayon and sequential execution.
//!
//! Compiled without the `parallel` feature every helper here degrades to a
//! plain loop. With the feature, a process-wide gate ([`set_enabled`]) allows
//! benchmarks to compare both paths inside one binary. Helpers are designed
//! so that parallel and sequential execution produce bit-identical results:
//! each index owns a disjoint slice of the output and reductions are ordered
//! by the caller.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Enable or disable rayon dispatch at runtime. No-op in sequential builds.
pub fn set_enabled(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::Relaxed);
}

/// True when work may be dispatched to rayon.
pub fn enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL_ENABLED.load(Ordering::Relaxed)
}

/// Number of execution lanes available to tile workers.
pub fn worker_lanes() -> usize {
    #[cfg(feature = "parallel")]
    {
        if enabled() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Run `f(chunk_index, chunk)` over equally owned mutable chunks of `out`.
///
/// `chunk_len` must evenly divide `out.len()`.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk_len > 0 && out.len() % chunk_len == 0);
    #[cfg(feature = "parallel")]
    {
        if enabled() && out.len() / chunk_len > 1 {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, chunk)| f(i, chunk));
            return;
        }
    }
    for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Map `0..n` to values, preserving index order in the output.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if enabled() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_fill_matches_sequential() {
        let mut a = vec![0usize; 12];
        let mut b = vec![0usize; 12];
        for_each_chunk_mut(&mut a, 3, |i, c| c.iter_mut().for_each(|v| *v = i));
        set_enabled(false);
        for_each_chunk_mut(&mut b, 3, |i, c| c.iter_mut().for_each(|v| *v = i));
        set_enabled(true);
        assert_eq!(a, b);
    }

    #[test]
    fn map_indexed_keeps_order() {
        assert_eq!(map_indexed(5, |i| i * 2), vec![0, 2, 4, 6, 8]);
    }
}
