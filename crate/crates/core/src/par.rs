//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon;
//! without it every call runs sequentially.

use serde::{Deserialize, Serialize};

/// How sibling work items are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Applies `f` to every item, preserving order in the output.
pub fn map_mut<T, R, F>(items: &mut [T], exec: Execution, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter_mut().map(f).collect();
    }
    let _ = exec;
    items.iter_mut().map(f).collect()
}

/// Runs `f(0..n)` on at most `workers` threads (0 means all cores) and returns
/// the results in index order.
pub fn map_range<R, F>(n: usize, workers: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && workers != 1 {
        use rayon::prelude::*;
        let run = || (0..n).into_par_iter().map(&f).collect();
        if workers == 0 {
            return run();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => return pool.install(run),
            Err(_) => return run(),
        }
    }
    let _ = (workers, exec);
    (0..n).map(f).collect()
}
