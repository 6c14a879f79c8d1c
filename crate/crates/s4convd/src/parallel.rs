//! Data-parallel execution helpers.
//!
//! Hot loops (per-channel kernel materialisation, per-row convolution,
//! per-row gradient passes) run through these two entry points. With the
//! `parallel` feature they fan out over rayon; without it they fall back to
//! plain sequential loops. Both paths perform the same floating-point
//! operations in the same order per row, and reductions always happen on the
//! caller's side in fixed index order, so results are bit-identical whichever
//! path runs and however many worker threads exist.

/// Environment variable capping the worker-thread count (default: all
/// hardware threads). Values that fail to parse are ignored with a warning.
pub const THREADS_ENV: &str = "S4CD_THREADS";

/// Applies `S4CD_THREADS` to the global thread pool. Call once at process
/// start; returns the effective worker count actually in use.
pub fn configure_from_env() -> usize {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => {
                log::warn!("ignoring {THREADS_ENV}={raw:?}: expected a positive integer");
                None
            }
        },
        Err(_) => None,
    };

    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested {
            // Errors only if a global pool already exists; keep whatever
            // pool that was.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        1
    }
}

/// Runs `f(row_index, row)` over consecutive `row_len` chunks of `out`.
/// Rows are disjoint, so the parallel and sequential paths write identical
/// bytes. `out.len()` must be a multiple of `row_len`.
pub fn for_each_row<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(row_len > 0 && out.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    for_each_row_seq(out, row_len, f);
}

/// Sequential twin of [`for_each_row`]; exists unconditionally so benchmarks
/// can compare the two code paths within one build.
pub fn for_each_row_seq<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert!(row_len > 0 && out.len() % row_len == 0);
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Collects `f(0..n)` preserving index order (rayon's ordered collect, or a
/// plain loop), so downstream reductions see a fixed operand order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
