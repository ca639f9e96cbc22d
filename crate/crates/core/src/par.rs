//! Chunked data-parallel loops. With the `parallel` feature the chunks are
//! spread over the current rayon pool; otherwise they run in order. Each
//! chunk is written by exactly one closure call, so results never depend on
//! the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(state, chunk_index, chunk)` for every `chunk`-sized piece of
/// `out`. `init` creates per-worker scratch state.
pub(crate) fn for_each_chunk<T, S, I, F>(out: &mut [T], chunk: usize, init: I, f: F)
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) + Sync + Send,
{
    if out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each_init(init, |s, (i, c)| f(s, i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = init();
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(&mut s, i, c);
        }
    }
}

/// Calls `f(index, item)` for every item of `items`.
pub(crate) fn for_each_item<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, t) in items.iter_mut().enumerate() {
            f(i, t);
        }
    }
}

/// Wall-clock timer; reports zero without the `std` feature.
pub(crate) struct Stopwatch {
    #[cfg(feature = "std")]
    start: std::time::Instant,
}

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Stopwatch {
            #[cfg(feature = "std")]
            start: std::time::Instant::now(),
        }
    }

    /// Seconds since `start`.
    pub(crate) fn elapsed(&self) -> f64 {
        #[cfg(feature = "std")]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(not(feature = "std"))]
        {
            0.0
        }
    }
}
