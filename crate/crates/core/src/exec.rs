//! Execution shim: rayon when the `parallel` feature is on, plain iterators
//! otherwise. Callers must already be schedule-deterministic (results keyed
//! by index, RNG streams derived per item), so both paths produce identical
//! output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub(crate) fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting results in input order.
#[cfg(feature = "parallel")]
pub(crate) fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    F: Fn(&'a T) -> U,
{
    items.iter().map(f).collect()
}

/// Like [`map_range`] but threads reusable scratch state into `f`; `init` is
/// called once per worker rather than once per item.
#[cfg(feature = "parallel")]
pub(crate) fn map_range_with<S, U, I, F>(n: usize, init: I, f: F) -> Vec<U>
where
    S: Send,
    U: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> U + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map_init(&init, |state, i| f(state, i))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range_with<S, U, I, F>(n: usize, init: I, f: F) -> Vec<U>
where
    I: Fn() -> S,
    F: Fn(&mut S, usize) -> U,
{
    let mut state = init();
    (0..n).map(|i| f(&mut state, i)).collect()
}
