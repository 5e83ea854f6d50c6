//! Batch front end for the instance search pipeline: feature extraction,
//! indexing, search, evaluation, benchmark building and scalability sweeps.

pub mod config;
pub mod data;
pub mod error;
pub mod extract;
pub mod pipeline;
pub mod scale;

pub use config::RunConfig;
pub use error::{ErrorReport, Failure};

/// Runs `f` on a pool with the configured thread count.
pub fn with_pool<T: Send>(config: &RunConfig, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        b = b.num_threads(n);
    }
    Ok(b.build()?.install(f))
}
