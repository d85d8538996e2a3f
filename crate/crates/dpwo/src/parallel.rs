//! Bounded, schedule-independent parallelism.
//!
//! Work items are split into contiguous index chunks over scoped threads and
//! each result lands in its own slot, so the output never depends on timing.
//! `DPWO_THREADS` caps the worker count.

/// Worker cap: `DPWO_THREADS` when set to a positive integer, otherwise the
/// available parallelism clamped to 8.
pub fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("DPWO_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n.min(64);
            }
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Applies `f` to every index in `0..count`, in parallel, returning results
/// in index order.
pub fn parallel_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_cap().min(count.max(1));
    if workers <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = Vec::with_capacity(count);
    slots.resize_with(count, || None);
    let chunk = count.div_ceil(workers);
    let fref = &f;
    std::thread::scope(|scope| {
        for (c, block) in slots.chunks_mut(chunk).enumerate() {
            let start = c * chunk;
            scope.spawn(move || {
                for (off, slot) in block.iter_mut().enumerate() {
                    *slot = Some(fref(start + off));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_in_index_order() {
        let out = parallel_map(257, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }

    #[test]
    fn empty_and_single() {
        assert!(parallel_map(0, |i| i).is_empty());
        assert_eq!(parallel_map(1, |i| i + 1), vec![1]);
    }

    #[test]
    fn env_var_caps_workers() {
        std::env::set_var("DPWO_THREADS", "3");
        assert_eq!(thread_cap(), 3);
        std::env::set_var("DPWO_THREADS", "0");
        assert!(thread_cap() >= 1);
        std::env::remove_var("DPWO_THREADS");
        assert!(thread_cap() >= 1);
    }
}
