//! Config-driven experiment runner for hierarchical PINN training.
//!
//! A TOML file names a problem, sample counts, a reference setup and one or
//! more level schedules; optional sweep axes multiply these into a run
//! matrix. Each run writes its trace, summary and grid dumps into its own
//! directory, and the sweep directory holds a manifest and comparison table.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{expand, load_config, parse_config, ConfigError, ExperimentConfig, RunPlan, Violation};
pub use report::{report, write_report, Report};
pub use runner::{load_summaries, read_manifest, run_experiments, worker_count, Manifest, RunStatus, RunSummary};
