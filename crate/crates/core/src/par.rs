//! Index-parallel map over scoped threads. Each index is processed exactly
//! once and results come back in index order, so output never depends on
//! the thread count.

pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let lo = (t * chunk).min(n);
                let hi = ((t + 1) * chunk).min(n);
                scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Worker count from an explicit request, defaulting to the available cores.
pub fn resolve_threads(requested: Option<usize>) -> usize {
    requested
        .filter(|t| *t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_threads() {
        let one = map_indexed(37, 1, |i| i * i);
        let four = map_indexed(37, 4, |i| i * i);
        assert_eq!(one, four);
        assert!(map_indexed(0, 3, |i| i).is_empty());
    }
}
