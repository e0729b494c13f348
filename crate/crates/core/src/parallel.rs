//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it,
//! or after [`set_enabled(false)`](set_enabled), they run on the calling
//! thread. Both paths produce bit-identical results: every reduction is
//! combined in index order regardless of how the work was scheduled.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Runtime switch for the parallel path. Has no effect without the
/// `parallel` feature.
pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

pub fn is_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_enabled() && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of
/// `data`, possibly in parallel.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if is_enabled() && data.len() > chunk {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Elementwise `Σ_{i<n} partial_i` over vectors of length `len`, where `fill`
/// writes partial `i` into a zeroed buffer. Partials are added into the total
/// strictly in order `i = 0, 1, …`, so the result does not depend on
/// scheduling.
pub fn sum_ordered<F>(n: usize, len: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    const BLOCK: usize = 16;
    let mut total = vec![0.0; len];
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let partials = map(end - start, |k| {
            let mut buf = vec![0.0; len];
            fill(start + k, &mut buf);
            buf
        });
        for p in partials {
            for (t, v) in total.iter_mut().zip(&p) {
                *t += v;
            }
        }
        start = end;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn sum_ordered_matches_sequential_sum() {
        let fill = |i: usize, buf: &mut [f64]| {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = ((i * 7 + j) as f64).sin() * 1e3 + 0.1;
            }
        };
        let got = sum_ordered(37, 5, fill);
        let mut want = vec![0.0; 5];
        for i in 0..37 {
            let mut buf = vec![0.0; 5];
            fill(i, &mut buf);
            for j in 0..5 {
                want[j] += buf[j];
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 23];
        for_each_chunk_mut(&mut v, 5, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v[0], 0);
        assert_eq!(v[22], 4);
    }
}
