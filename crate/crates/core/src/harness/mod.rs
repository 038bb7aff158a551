//! Experiment harness: configuration, dataset and checkpoint persistence,
//! the training loop, evaluation sweeps over noise levels, and recovery
//! report tables.

mod checkpoint;
mod config;
mod dataset;
mod eval;
mod report;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{BaselineKind, ExperimentConfig};
pub use dataset::{generate_dataset, read_jsonl, write_jsonl, Sample};
pub use eval::{evaluate, evaluate_baselines, write_recovery_csv, RecoveryRow, RecoveryTable};
pub use report::{merge_recovery_rows, read_recovery_csv, write_report_csv};
pub use train::{train, EpochLog, TrainOutcome};

/// Caps the rayon worker pool from the `QAPM_THREADS` environment variable.
/// Results are identical for any worker count (per-trial derived seeds,
/// aggregation in index order); the cap only limits CPU use. Must be called
/// before any parallel work; later calls are no-ops.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("QAPM_THREADS") {
        if let Ok(threads) = v.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}
