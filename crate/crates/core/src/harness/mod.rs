//! Experiment configuration, training runs, benchmarks and reports.

pub mod bench;
pub mod config;
pub mod report;
pub mod run;

pub use bench::{bench_backprop, BenchConfig, BenchRow};
pub use config::{ExperimentConfig, Mode, Task};
pub use report::report;
pub use run::{run, sweep, MetricsRow, Summary, SweepSummary};
