//! Experiment runner: TOML configs, seeded parallel runs, aggregation, CSV and SVG output.
//!
//! Every `(algorithm, run)` pair is an independent task. Within a run index
//! all algorithms face the same environment draw, contexts and noise
//! sequence; each algorithm's own randomness comes from a stream keyed by its
//! label, so adding or reseeding one algorithm leaves the others untouched.

mod config;
mod output;
mod run;
mod svg;

pub use config::{EnvSource, EnvironmentSpec, ExperimentConfig};
pub use output::{
    aggregate, aggregate_discrepancy, emit_outputs, read_aggregate, read_raw, reaggregate_dir, write_plots,
    AggregateRow, RawRow, ResultsTable,
};
pub use run::{
    checkpoints, policy_seed, run_environment, run_experiment, run_experiment_with, simulate_run, stream_seed, EnvFactory,
    RunDiagnostics, RunResult,
};
pub use svg::{render_plot, Series};
