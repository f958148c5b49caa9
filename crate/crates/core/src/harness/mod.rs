//! Experiment configuration, the exact-posterior oracle, evaluation tables
//! and step sweeps.

mod config;
mod eval;
mod oracle;
mod run;
mod sweep;

pub use config::{Experiment, ExperimentConfig, PriorSource, Seeds, TaskSpec};
pub use eval::{evaluate, Evaluation, EVAL_HEADER};
pub use oracle::{oracle_posterior, PosteriorOracle, SIGMA_FLOOR};
pub use sweep::{sweep, with_thread_limit, CellMetrics, Strategy, SweepRow, SweepTable, SWEEP_HEADER, THREADS_VAR};
