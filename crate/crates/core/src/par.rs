//! Index-parallel map that degrades to a serial loop without the `parallel`
//! feature. Output order always follows the index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Size the global worker pool. Has no effect on results, only on speed.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) -> crate::Result<()> {
    Ok(())
}
