//! Ordered parallel evaluation over path indices.

use std::sync::OnceLock;

use rayon::prelude::*;
use rayon::ThreadPool;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::wiener::TimeGrid;

/// Grid, path count and seed of a Monte Carlo batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Batch {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
}

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PATHFLOW_THREADS";

fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// `f(0), …, f(n−1)` evaluated in parallel, returned in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    pool().install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Like [`par_map`] for fallible work; fails if more than `max_fail_fraction` of paths fail.
pub fn par_try_map<T, F>(n: usize, max_fail_fraction: f64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let all = par_map(n, f);
    let failed = all.iter().filter(|r| r.is_err()).count();
    if failed as f64 > max_fail_fraction * n as f64 {
        let first = all
            .into_iter()
            .find_map(|r| r.err())
            .expect("at least one failure");
        return Err(Error::Solver(format!(
            "{failed} of {n} paths failed; first: {first}"
        )));
    }
    Ok(all.into_iter().filter_map(|r| r.ok()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v = par_map(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }

    #[test]
    fn failure_budget() {
        let ok = par_try_map(100, 0.01, |i| {
            if i == 5 {
                Err(Error::Solver("x".into()))
            } else {
                Ok(i)
            }
        });
        assert_eq!(ok.unwrap().len(), 99);
        let bad = par_try_map(100, 0.01, |i| {
            if i < 2 {
                Err(Error::Solver("x".into()))
            } else {
                Ok(i)
            }
        });
        assert!(bad.is_err());
    }
}
