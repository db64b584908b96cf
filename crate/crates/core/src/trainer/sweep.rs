use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graphdata::{Dataset, SplitIndex, SplitName};
use crate::trainer::{run, RunConfig, TrainConfig};

/// Values each of `α₁` and `α₂` takes in the default grid.
pub const SWEEP_VALUES: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

pub fn default_grid() -> Vec<(f64, f64)> {
    SWEEP_VALUES.iter().flat_map(|&a1| SWEEP_VALUES.iter().map(move |&a2| (a1, a2))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub pehe_root: Option<f64>,
    pub ate_error: Option<f64>,
    pub n: usize,
}

/// Trains one model per `(α₁, α₂)` cell with the same seed and data and
/// reports test metrics. Cells run on the current rayon pool.
pub fn sweep(dataset: &Dataset, split: &SplitIndex, base: &RunConfig, grid: &[(f64, f64)]) -> Result<Vec<SweepRow>> {
    grid.par_iter()
        .map(|&(alpha_1, alpha_2)| {
            let config = RunConfig { train: TrainConfig { alpha_1, alpha_2, ..base.train.clone() }, ..base.clone() };
            let (_, report) = run(dataset, split, &config, &[SplitName::Test])?;
            let m = &report.metrics[&SplitName::Test];
            Ok(SweepRow { alpha_1, alpha_2, pehe_root: m.pehe_root, ate_error: m.ate_error, n: m.n_evaluated })
        })
        .collect()
}
