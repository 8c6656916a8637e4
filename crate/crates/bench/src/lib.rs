//! Experiment harness: declarative TOML configs, synthetic MDP and slate
//! worlds, repeated-trial OPE benchmarks, model selection, propensity
//! scaling and diagnostics, with deterministic CSV/JSON output.

pub mod config;
pub mod diagnose;
pub mod emit;
pub mod error;
pub mod mdp_bench;
pub mod propensity;
pub mod scaling;
pub mod selection;
pub mod slate_bench;
pub mod summary;
pub mod world;

pub use config::ExperimentConfig;
pub use emit::{emit_results, read_table, Cell, Manifest, Table};
pub use error::{BenchError, Result};
