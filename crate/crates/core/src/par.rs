//! Data-parallel map helpers with a sequential fallback.
//!
//! Everything hot in this crate — batch gradients, per-window graph scoring,
//! per-sequence simulation and evaluation — is an independent map over a
//! slice. With the `parallel` feature (default) these run on rayon; without
//! it they are plain iterators. Both paths preserve input order, so results
//! (including floating-point reductions done by the caller in index order)
//! are bit-identical across the two builds and across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map over a slice, parallel when the feature is on.
#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Order-preserving map over a slice (sequential build).
#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Always-sequential variant, kept callable in every build so benches can
/// compare the two paths directly.
pub fn map_slice_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map over an index range; same ordering guarantees as [`map_slice`].
#[cfg(feature = "parallel")]
pub fn map_range<U: Send, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map over an index range (sequential build).
#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
