//! Order-preserving parallel map with a cap on concurrent calls.

use rayon::prelude::*;

/// Applies `f` to every item with at most `limit` calls in flight.
/// Results come back in input order.
pub fn bounded_map<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let limit = limit.max(1);
    if limit == 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
