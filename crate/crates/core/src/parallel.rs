//! Order-preserving parallel map on a pool capped by `HRTF_FIELD_THREADS`.

use std::sync::OnceLock;

use rayon::prelude::*;

/// Environment variable limiting worker threads.
pub const THREADS_ENV: &str = "HRTF_FIELD_THREADS";

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// Results come back in input order regardless of scheduling.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    if items.len() <= 1 || pool().current_num_threads() == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    pool().install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}
