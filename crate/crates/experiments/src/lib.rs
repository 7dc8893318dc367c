//! Experiment pipelines on top of `advreg-core`: replicated sweeps over the
//! aspect ratio `gamma = m / n`, finite-sample concentration experiments and
//! the CSV tables consumed by the plotting scripts.

pub mod concentration_lab;
pub mod error;
pub mod figure_plans;
pub mod risk_experiments;
pub mod stats;
pub mod table;

pub use error::{ExpError, ExpResult};
pub use stats::{QuantileSeries, Quartiles};
pub use table::Table;

/// Runs `f` on a worker pool of `threads` threads, or on the global pool when
/// `threads` is `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> ExpResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(ExpError::Invalid("threads must be >= 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| ExpError::Invalid(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
