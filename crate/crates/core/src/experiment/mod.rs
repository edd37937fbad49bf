//! Configuration, run records, sweeps and the command implementations behind
//! the CLI.

pub mod commands;
pub mod config;
pub mod desk;
pub mod record;
pub mod sweep;

pub use commands::{
    diagnose_command, curve_command, evaluate_command, export_command, pretrain_and_probe, pretrain_command, sample,
    sweep_command, synth, SlideIndex,
};
pub use desk::{run_desk, DeskResult, DeskSettings};
pub use config::{ExperimentConfig, CONFIG_FILE, DATA_ROOT_ENV};
pub use record::{create_run_dir, RunRecord, RECORD_FILE};
pub use sweep::{apply_point, derived_lr, expand_grid, run_sweep, sweep_table, RunOutcome, SweepAxis, SweepPoint, SweepReport, SweepRun, SweepSpec};
