//! Thread configuration and a deterministic chunked runner for element loops.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Set the worker count for element loops (0 means all available cores).
pub fn set_threads(n: usize) {
    let n = if n == 0 {
        std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1)
    } else {
        n
    };
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Run `f` on contiguous index chunks, concatenating the outputs in chunk
/// order. The reduction order is fixed by the chunking, not by thread
/// timing, so results are bit-identical for any worker count.
pub fn run_chunked<T: Send>(
    n: usize,
    f: impl Fn(Range<usize>) -> Vec<T> + Sync,
) -> Vec<T> {
    let workers = threads().min(n.max(1));
    if workers <= 1 || n < 256 {
        return f(0..n);
    }
    let chunk = n.div_ceil(workers);
    let mut pieces: Vec<Vec<T>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(n);
            let f = &f;
            handles.push(scope.spawn(move || f(lo..hi)));
        }
        for h in handles {
            pieces.push(h.join().expect("worker panicked"));
        }
    });
    pieces.into_iter().flatten().collect()
}
