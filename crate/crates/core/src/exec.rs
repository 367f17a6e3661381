//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature, index-space maps run on the ambient rayon pool.
//! Without it, or inside [`Parallelism::Sequential`], they run in order on the
//! calling thread. Callers always receive results in index order and never
//! depend on completion order, so outputs do not change with the thread count.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// How much parallelism a computation may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Run on the calling thread only.
    Sequential,
    /// A dedicated pool with this many workers.
    Threads(usize),
    /// The global pool (available parallelism).
    #[default]
    Auto,
}

impl Parallelism {
    pub fn from_threads(threads: Option<usize>) -> Self {
        match threads {
            None | Some(0) => Parallelism::Auto,
            Some(1) => Parallelism::Sequential,
            Some(n) => Parallelism::Threads(n),
        }
    }

    /// Runs `f` under this parallelism setting.
    pub fn install<R: Send>(self, f: impl FnOnce() -> R + Send) -> R {
        match self {
            Parallelism::Sequential => with_sequential(f),
            #[cfg(feature = "parallel")]
            Parallelism::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(f),
                Err(_) => with_sequential(f),
            },
            #[cfg(not(feature = "parallel"))]
            Parallelism::Threads(_) => with_sequential(f),
            Parallelism::Auto => f(),
        }
    }
}

fn with_sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FORCE_SEQUENTIAL.with(|c| c.set(self.0));
        }
    }
    let _reset = Reset(FORCE_SEQUENTIAL.with(|c| c.replace(true)));
    f()
}

fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential_forced() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Maps `f` over fixed-size chunks of `0..len`. The partition depends only on
/// `len` and `chunk`, so a caller that folds the results in order gets the same
/// floating-point sum for any thread count.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    map_indexed(n_chunks, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(len))
    })
}

/// Number of worker threads the current context would use.
pub fn current_threads() -> usize {
    if sequential_forced() {
        return 1;
    }
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
