//! Kernel-level parallelism control.
//!
//! Only individual kernels (matrix products) fan out, and they partition by
//! output rows, so enabling threads never changes a result. Sequential mode
//! pins everything to the calling thread.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);
static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Environment variable capping kernel threads.
pub const THREADS_ENV: &str = "OODKIT_THREADS";

pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    SEQUENTIAL.load(Ordering::SeqCst)
}

fn configured_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n = configured_threads();
        if n <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .thread_name(|i| format!("oodkit-kernel-{i}"))
            .build()
            .ok()
    })
    .as_ref()
}

/// Number of threads a kernel may use right now.
pub fn kernel_threads() -> usize {
    if is_sequential() {
        return 1;
    }
    pool().map_or(1, |p| p.current_num_threads())
}

pub(crate) fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match pool() {
        Some(p) if !is_sequential() => p.install(f),
        _ => f(),
    }
}
