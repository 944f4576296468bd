//! Execution helpers for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the maps below fan out over rayon;
//! without it they run sequentially. Work is always split at fixed task
//! boundaries and partial results are merged in task-index order, so both
//! modes produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order in the result.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sums `term(i)` for `i in 0..n` with fixed chunk boundaries: each chunk is
/// accumulated sequentially, and the chunk subtotals are added in order.
/// Summation is compensated (Kahan) within chunks and across subtotals, so
/// the result is resolved to about one ulp of the total; optimizer line
/// searches compare such sums at that resolution.
pub(crate) fn chunked_sum<F>(n: usize, chunk: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    debug_assert!(chunk > 0);
    let kahan = |acc: &mut f64, comp: &mut f64, term: f64| {
        let y = term - *comp;
        let t = *acc + y;
        *comp = (t - *acc) - y;
        *acc = t;
    };
    let n_chunks = n.div_ceil(chunk.max(1));
    let partials = map_indexed(n_chunks, |c| {
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(n);
        let (mut acc, mut comp) = (0.0, 0.0);
        for i in lo..hi {
            kahan(&mut acc, &mut comp, term(i));
        }
        acc
    });
    let (mut total, mut comp) = (0.0, 0.0);
    for p in partials {
        kahan(&mut total, &mut comp, p);
    }
    total
}
