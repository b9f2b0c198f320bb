//! Metrics, persistence, result tables, plots and experiment orchestration.

pub mod experiment;
pub mod io;
pub mod metrics;
pub mod plot;
pub mod table;

pub use experiment::{run_experiment, run_experiment_detailed, ExperimentSpec, Method};
pub use metrics::{measure_smnr, nmse};
pub use table::ResultTable;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Results keep the input order either way.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
