//! Deterministic data-parallel primitives.
//!
//! Every hot loop in the crate is expressed as a fold over fixed-size chunks
//! of a slice. Chunk boundaries depend only on the input length, and partial
//! accumulators are merged in chunk order, so the result is bit-identical
//! whether chunks run on rayon (`parallel` feature, default) or sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Folds `items` chunk by chunk and merges the per-chunk accumulators in
/// chunk order. `fold` receives the global item index alongside each item.
pub fn chunked_fold<T, A>(
    items: &[T],
    chunk_size: usize,
    make: impl Fn() -> A + Sync,
    fold: impl Fn(&mut A, usize, &T) + Sync,
    merge: impl Fn(&mut A, A),
) -> A
where
    T: Sync,
    A: Send,
{
    let chunk_size = chunk_size.max(1);
    let run_chunk = |(ci, chunk): (usize, &[T])| {
        let mut acc = make();
        for (k, item) in chunk.iter().enumerate() {
            fold(&mut acc, ci * chunk_size + k, item);
        }
        acc
    };

    #[cfg(feature = "parallel")]
    let parts: Vec<A> = items.par_chunks(chunk_size).enumerate().map(run_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<A> = items.chunks(chunk_size).enumerate().map(run_chunk).collect();

    let mut out = make();
    for part in parts {
        merge(&mut out, part);
    }
    out
}

/// Maps `items` to a vector, preserving input order.
pub fn ordered_map<T, U>(items: &[T], f: impl Fn(usize, &T) -> U + Sync) -> Vec<U>
where
    T: Sync,
    U: Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Runs `f` over disjoint mutable chunks of `out`. Chunks are indexed in
/// order; `f` gets the chunk index and the chunk's starting offset.
pub fn for_each_chunk_mut<T>(
    out: &mut [T],
    chunk_size: usize,
    f: impl Fn(usize, usize, &mut [T]) + Sync,
) where
    T: Send,
{
    let chunk_size = chunk_size.max(1);
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(chunk_size)
        .enumerate()
        .for_each(|(ci, chunk)| f(ci, ci * chunk_size, chunk));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(chunk_size)
        .enumerate()
        .for_each(|(ci, chunk)| f(ci, ci * chunk_size, chunk));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_fold_matches_sequential_sum() {
        let items: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let total = chunked_fold(
            &items,
            64,
            || 0.0f64,
            |acc, _, x| *acc += x,
            |acc, part| *acc += part,
        );
        // Same chunking applied by hand.
        let mut expect = 0.0;
        for chunk in items.chunks(64) {
            let mut part = 0.0;
            for x in chunk {
                part += x;
            }
            expect += part;
        }
        assert_eq!(total, expect);
    }

    #[test]
    fn ordered_map_preserves_order() {
        let items: Vec<usize> = (0..257).collect();
        let mapped = ordered_map(&items, |i, &x| i * 1000 + x);
        for (i, &v) in mapped.iter().enumerate() {
            assert_eq!(v, i * 1000 + i);
        }
    }
}
