//! Thin switch between rayon data-parallel maps and a sequential fallback.
//!
//! With the default `parallel` feature the mapped closures run on the rayon
//! pool; without it the same entry points degrade to plain iteration, so
//! callers never branch on the feature themselves. The `*_seq` variants are
//! always available for benchmarking one against the other.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_range_seq<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync) -> Vec<U> {
    map_range_seq(n, f)
}

pub fn map_slice_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    map_slice_seq(items, f)
}

/// Caps the rayon worker count for the whole process. No-op without the
/// `parallel` feature or when `jobs` is zero.
pub fn limit_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}
