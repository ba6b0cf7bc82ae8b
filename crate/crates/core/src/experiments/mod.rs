//! Config-driven sweeps.

pub mod config;
pub mod fits;
pub mod grid;
pub mod pop_run;
pub mod seeds;

pub use config::{ExperimentConfig, Family};
pub use fits::{fit_collapse, fit_onset, Curves, OnsetFit, ScalingFit, Threshold};
pub use grid::{aggregate, execute_delta_grid, run_delta_grid, AggregateRow, DeltaRow};
pub use pop_run::{execute_pop, run_pop_experiment, PopSnapshot};
