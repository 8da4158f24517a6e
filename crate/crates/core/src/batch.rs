//! Independent trials mapped over a worker pool.
//!
//! With the `parallel` feature (default) trials run on a rayon pool;
//! without it, or with [`Execution::Sequential`], they run in order on the
//! calling thread. Results come back indexed by trial either way.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// Runs `f(0..trials)` and returns the results in trial order.
///
/// `threads` caps the pool size; `None` uses rayon's default.
pub fn run_trials<T, F>(trials: usize, execution: Execution, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution {
        Execution::Sequential => (0..trials).map(f).collect(),
        Execution::Parallel => parallel(trials, threads, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel<T, F>(trials: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    let work = || (0..trials).into_par_iter().map(&f).collect();
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(work),
            Err(_) => (0..trials).map(&f).collect(),
        },
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel<T, F>(trials: usize, _threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..trials).map(f).collect()
}
