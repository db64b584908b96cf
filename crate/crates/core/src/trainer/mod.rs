//! Training loop with early stopping, ablation variants, run directories,
//! and hyperparameter sweeps.

mod config;
pub mod run;
mod sweep;
mod train;

pub use config::{TrainConfig, Variant};
pub use run::{load_model, run, write_run, RunConfig, RunReport};
pub use sweep::{default_grid, sweep, SweepRow, SWEEP_VALUES};
pub use train::{train, validation_nll_y, EpochRecord, TrainOutcome, Trainer};
