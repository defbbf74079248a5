//! Data-parallel helpers for the side-effect-free inner loops: batch model
//! evaluation, coverage counting, exhaustive enumeration and linear scans.
//!
//! With the `parallel` feature disabled every helper runs sequentially and
//! [`Execution::Parallel`] behaves like [`Execution::Sequential`]. Results
//! are identical in both modes; only the schedule differs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Below this many items the sequential path is always taken.
pub const MIN_PARALLEL_LEN: usize = 2048;

pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Like [`map`] but the parallel threshold is the caller's business; use for
/// few, expensive items.
pub fn map_coarse<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub fn count<T, F>(exec: Execution, items: &[T], pred: F) -> usize
where
    T: Sync,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_iter().filter(|t| pred(t)).count();
    }
    let _ = exec;
    items.iter().filter(|t| pred(t)).count()
}

/// Sum of `f(i)` over `0..n`. Float sums are reduced in a fixed chunk order,
/// so both modes return bit-identical totals.
pub fn sum_range<F>(exec: Execution, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const CHUNK: usize = 4096;
    let chunks = n.div_ceil(CHUNK);
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && n >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        let partial: Vec<f64> = (0..chunks).into_par_iter().map(chunk_sum).collect();
        return partial.into_iter().sum();
    }
    let _ = exec;
    (0..chunks).map(chunk_sum).sum()
}

/// Index of the minimum under `key`, ties to the lowest index.
pub fn argmin_by_key<T, K, F>(exec: Execution, items: &[T], key: F) -> Option<usize>
where
    T: Sync,
    K: PartialOrd + Send + Copy,
    F: Fn(&T) -> K + Sync + Send,
{
    let better = |a: (usize, K), b: (usize, K)| -> (usize, K) {
        match b.1.partial_cmp(&a.1) {
            Some(std::cmp::Ordering::Less) => b,
            Some(std::cmp::Ordering::Equal) if b.0 < a.0 => b,
            _ => a,
        }
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items
            .par_iter()
            .enumerate()
            .map(|(i, t)| (i, key(t)))
            .reduce_with(better)
            .map(|(i, _)| i);
    }
    let _ = exec;
    items
        .iter()
        .enumerate()
        .map(|(i, t)| (i, key(t)))
        .reduce(better)
        .map(|(i, _)| i)
}

pub fn join<A, B, RA, RB>(exec: Execution, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return rayon::join(a, b);
    }
    let _ = exec;
    (a(), b())
}
