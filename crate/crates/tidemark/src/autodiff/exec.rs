//! Dispatch between rayon data-parallel and sequential kernel execution.
//!
//! With the default `parallel` feature, work is split across rayon only over
//! disjoint output slices, never through parallel floating-point reductions,
//! so results stay bit-identical to the sequential path run for run.
//! Without the feature the crate has no rayon dependency at all.
//!
//! The `*_seq` variants are always compiled; they are the fallback bodies and
//! the baseline side of the criterion benches.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f(i, chunk)` over consecutive `width`-sized chunks of `data`.
pub fn for_each_chunk<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(width > 0 && data.len() % width == 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for_each_chunk_seq(data, width, f);
    }
}

/// Sequential chunk loop.
pub fn for_each_chunk_seq<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(width > 0 && data.len() % width == 0);
    data.chunks_mut(width).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map each item of `items` to an output value, in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
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

/// Sequential counterpart of [`map_indices`].
pub fn map_indices_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Compile-time selector between the parallel and sequential chunk loops, so
/// a kernel can be instantiated for both and benchmarked head to head.
pub trait Executor {
    fn chunks<F>(data: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send;
}

/// Rayon-backed executor (sequential when the `parallel` feature is off).
pub enum Parallel {}

impl Executor for Parallel {
    fn chunks<F>(data: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        for_each_chunk(data, width, f);
    }
}

/// Always-sequential executor.
pub enum Sequential {}

impl Executor for Sequential {
    fn chunks<F>(data: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        for_each_chunk_seq(data, width, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_seq_agree() {
        let mut a = vec![0.0; 12];
        let mut b = vec![0.0; 12];
        let f = |i: usize, c: &mut [f64]| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 10 + j) as f64;
            }
        };
        for_each_chunk(&mut a, 3, f);
        for_each_chunk_seq(&mut b, 3, f);
        assert_eq!(a, b);
    }
}
