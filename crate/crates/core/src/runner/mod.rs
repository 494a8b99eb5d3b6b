//! Configuration, orchestration and the acceptance suite.

mod commands;
mod config;
pub mod verify;

pub use commands::{
    cmd_env, cmd_simulate, cmd_theory, cmd_verify, run_environment, EnvSummary, RunManifest, SimulationSummary, TheoryReport,
    VerifyReport, MANIFEST_FILE, REPORT_JSON, REPORT_TEXT,
};
pub use config::{ExperimentConfig, Preset, RunSection, VerifySection, DEFAULT_SEED, SCHEMA_VERSION};
