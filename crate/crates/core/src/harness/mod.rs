//! Seeded Monte Carlo harness: single trials, gain sweeps and artifact output.

pub mod output;
pub mod seed;
pub mod sweep;
pub mod trial;

pub use sweep::{
    estimate_gain, estimate_gain_with, lambda_comparison, tail_check_lemma1, ExperimentSpec,
    bounds_table, BoundsRow, ExperimentSummary, LambdaRow, RowDiagnostics, SummaryRow, TailCheck,
};
pub use trial::{run_trial, run_trial_traced, Policy, TrialOutcome, Trajectory};

/// Run `f` on a dedicated pool of `workers` threads (the global pool when
/// `None`). Results never depend on the worker count.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> crate::Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| crate::Error::Usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
