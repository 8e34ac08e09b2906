//! Experiment configs, the staged on-disk pipeline and multi-seed tables.

pub mod config;
pub mod manifest;
pub mod reproduce;
pub mod run;
pub mod svg;

pub use config::{default_plan, heat_phases, ExperimentConfig, ExperimentKind};
pub use manifest::RunManifest;
pub use reproduce::{reproduce, Check, Report, ReproduceOptions, Table};
pub use run::{cmd_eval, cmd_generate, cmd_train, evaluate, generate_data, train_model, RunOptions, StageReport, StageStatus};
