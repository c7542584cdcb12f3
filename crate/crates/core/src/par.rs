//! Order-preserving data-parallel helpers with sequential fallbacks.
//!
//! Every hot loop in the crate (batch encoding, index scan, mining,
//! per-question evaluation) routes through [`map_ordered`]. With the
//! `parallel` feature (default) the map runs on rayon; without it the code
//! compiles to a plain iterator chain. Both paths produce results in input
//! order, and all floating-point reductions downstream consume them in that
//! order, so results are bit-identical regardless of feature or thread count.
//!
//! The `_seq` variants are always compiled; the criterion bench suite uses
//! them as the baseline when comparing against the rayon path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving input order.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential reference implementation of [`map_ordered`].
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map over an index range, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Sequential reference implementation of [`map_range`].
pub fn map_range_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Configure the global thread pool. `None` leaves the rayon default.
/// Without the `parallel` feature this is a no-op.
pub fn init_threads(n: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = n {
        // Ignore the error: the global pool can only be built once, which is
        // fine for repeated calls in one process (tests, `pipeline`).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_matches_sequential() {
        let items: Vec<u64> = (0..10_000).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) >> 7;
        assert_eq!(map_ordered(&items, f), map_ordered_seq(&items, f));
        let g = |i: usize| (i as f64).sqrt().sin();
        let a = map_range(5000, g);
        let b = map_range_seq(5000, g);
        assert_eq!(a, b); // bit-exact, not approx: same per-element arithmetic
    }
}
