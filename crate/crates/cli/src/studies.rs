//! Plot-data studies: selection bias, latent-factor ablation and the
//! `(α₁, α₂)` sweep. Each study is a list of [`Cell`]s; every cell is one
//! training run and becomes one CSV row.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dvga_core::graphdata::{Dataset, SplitName};
use dvga_core::seeding::derive_seed;
use dvga_core::synthgen::{self, GenConfig};
use dvga_core::trainer::{self, RunConfig, TrainConfig, Variant, SWEEP_VALUES};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Bias,
    Radar,
    Sweep,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Bias => "bias",
            Study::Radar => "radar",
            Study::Sweep => "sweep",
        }
    }

    pub fn variants(self) -> &'static [Variant] {
        match self {
            Study::Bias => &[Variant::Full, Variant::NoHsic, Variant::NoBp, Variant::SingleFactor],
            Study::Radar => &[Variant::Full, Variant::ZeroZt, Variant::ZeroZc, Variant::ZeroZy, Variant::ZeroZo],
            Study::Sweep => &[Variant::Full],
        }
    }
}

/// Settings shared by all studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Generator settings; `seed`, `zeta` and block sizes are overridden per
    /// cell.
    pub generator: GenConfig,
    pub run: RunConfig,
    pub replicates: usize,
    /// Selection-bias strengths for the bias study.
    pub zetas: Vec<f64>,
    /// Block dimensions for the bias and sweep studies.
    pub dims: [usize; 4],
    /// Scenarios for the radar study; empty means all sixteen.
    pub scenarios: Vec<[usize; 4]>,
    pub alphas: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            generator: GenConfig::default(),
            run: RunConfig { train: desk_train_config(), ..RunConfig::default() },
            replicates: synthgen::SEEDS_PER_SCENARIO,
            zetas: vec![0.5, 1.0, 2.0, 3.0],
            dims: [8, 8, 8, 8],
            scenarios: Vec::new(),
            alphas: SWEEP_VALUES.to_vec(),
        }
    }
}

/// Training settings for the synthetic studies: 300 epochs at a learning
/// rate that makes progress within that budget.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig { epochs: 300, learning_rate: DESK_LEARNING_RATE, reg_sample: Some(256), ..TrainConfig::default() }
}

pub const DESK_LEARNING_RATE: f64 = 1e-2;

/// One training run of a study.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub study: Study,
    pub dims: [usize; 4],
    pub zeta: f64,
    pub replicate: usize,
    pub variant: Variant,
    pub alpha_1: f64,
    pub alpha_2: f64,
}

impl Cell {
    pub fn generator(&self, cfg: &StudyConfig, base_seed: u64) -> GenConfig {
        GenConfig {
            zeta: self.zeta,
            seed: data_seed(base_seed, self.replicate),
            ..cfg.generator.clone().with_dims(self.dims)
        }
    }

    pub fn run_config(&self, cfg: &StudyConfig, base_seed: u64) -> RunConfig {
        let seed = train_seed(base_seed, self.replicate);
        let mut run = cfg.run.clone();
        run.train = TrainConfig { variant: self.variant, alpha_1: self.alpha_1, alpha_2: self.alpha_2, seed, ..run.train };
        run.model.seed = seed;
        run
    }
}

/// Data seed of replicate `r`; identical across scenarios and `ζ` so that
/// every setting sees the same latent draws.
pub fn data_seed(base: u64, replicate: usize) -> u64 {
    derive_seed(base, &[0x5ce0, replicate as u64])
}

pub fn train_seed(base: u64, replicate: usize) -> u64 {
    derive_seed(base, &[0x7a1, replicate as u64])
}

pub fn cells(study: Study, cfg: &StudyConfig) -> Vec<Cell> {
    let (a1, a2) = (cfg.run.train.alpha_1, cfg.run.train.alpha_2);
    let mut out = Vec::new();
    let cell = |dims, zeta, replicate, variant, alpha_1, alpha_2| Cell { study, dims, zeta, replicate, variant, alpha_1, alpha_2 };
    match study {
        Study::Bias => {
            for &zeta in &cfg.zetas {
                for r in 0..cfg.replicates {
                    for &v in study.variants() {
                        out.push(cell(cfg.dims, zeta, r, v, a1, a2));
                    }
                }
            }
        }
        Study::Radar => {
            let scenarios = if cfg.scenarios.is_empty() { synthgen::scenario_dims() } else { cfg.scenarios.clone() };
            for dims in scenarios {
                for r in 0..cfg.replicates {
                    for &v in study.variants() {
                        out.push(cell(dims, cfg.generator.zeta, r, v, a1, a2));
                    }
                }
            }
        }
        Study::Sweep => {
            for r in 0..cfg.replicates {
                for &x in &cfg.alphas {
                    for &y in &cfg.alphas {
                        out.push(cell(cfg.dims, cfg.generator.zeta, r, Variant::Full, x, y));
                    }
                }
            }
        }
    }
    out
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub study: String,
    pub scenario: String,
    pub zeta: f64,
    pub replicate: usize,
    pub data_seed: u64,
    pub variant: String,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub pehe_root: f64,
    pub ate_error: f64,
    pub n_test: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn dims_label(dims: [usize; 4]) -> String {
    dims.iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
}

pub fn run_cell(cell: &Cell, dataset: &Dataset, cfg: &StudyConfig, base_seed: u64) -> Result<Row> {
    let split = dataset.splits.as_ref().context("generated dataset lacks splits")?;
    let run = cell.run_config(cfg, base_seed);
    let (_, report) = trainer::run(dataset, split, &run, &[SplitName::Test])?;
    let m = &report.metrics[&SplitName::Test];
    Ok(Row {
        study: cell.study.as_str().into(),
        scenario: dims_label(cell.dims),
        zeta: cell.zeta,
        replicate: cell.replicate,
        data_seed: data_seed(base_seed, cell.replicate),
        variant: cell.variant.as_str().into(),
        alpha_1: cell.alpha_1,
        alpha_2: cell.alpha_2,
        pehe_root: m.pehe_root.context("synthetic data has ground truth")?,
        ate_error: m.ate_error.context("synthetic data has ground truth")?,
        n_test: m.n_evaluated,
        best_epoch: report.best_epoch,
        epochs_run: report.epochs_run,
    })
}

/// Runs every cell on a pool of `jobs` workers. Cells sharing a dataset are
/// grouped so each dataset is generated once per group.
pub fn execute(cells: &[Cell], cfg: &StudyConfig, base_seed: u64, jobs: usize) -> Result<Vec<Row>> {
    use rayon::prelude::*;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        let key = format!("{}|{}|{}", dims_label(c.dims), c.zeta, c.replicate);
        groups.entry(key).or_default().push(i);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let results: Vec<Vec<(usize, Row)>> = pool.install(|| {
        groups
            .par_iter()
            .map(|members| -> Result<Vec<(usize, Row)>> {
                let first = &cells[members[0]];
                let dataset = synthgen::generate(&first.generator(cfg, base_seed))?;
                members
                    .par_iter()
                    .map(|&i| Ok((i, run_cell(&cells[i], &dataset, cfg, base_seed)?)))
                    .collect()
            })
            .collect::<Result<_>>()
    })?;
    let mut rows: Vec<(usize, Row)> = results.into_iter().flatten().collect();
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn validate(cfg: &StudyConfig, study: Study) -> Result<()> {
    if cfg.replicates == 0 {
        bail!("replicates must be at least 1");
    }
    if study == Study::Bias && cfg.zetas.is_empty() {
        bail!("the bias study needs at least one zeta");
    }
    if study == Study::Sweep && cfg.alphas.is_empty() {
        bail!("the sweep study needs at least one alpha value");
    }
    cfg.generator.validate()?;
    cfg.run.validate()?;
    Ok(())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median `pehe_root` per `(scenario, zeta, variant)`.
pub fn median_pehe(rows: &[Row]) -> BTreeMap<(String, String, String), f64> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario.clone(), r.zeta.to_string(), r.variant.clone())).or_default().push(r.pehe_root);
    }
    groups.into_iter().map(|(k, v)| (k, median(&v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_counts() {
        let cfg = StudyConfig::default();
        assert_eq!(cells(Study::Bias, &cfg).len(), 4 * 4 * 5);
        assert_eq!(cells(Study::Radar, &cfg).len(), 5 * 16 * 5);
        let one = StudyConfig { replicates: 1, ..cfg };
        assert_eq!(cells(Study::Sweep, &one).len(), 25);
    }

    #[test]
    fn data_seed_ignores_variant_and_zeta() {
        let cfg = StudyConfig::default();
        let cs = cells(Study::Bias, &cfg);
        let a = cs.iter().find(|c| c.zeta == 0.5 && c.replicate == 2 && c.variant == Variant::Full).unwrap();
        let b = cs.iter().find(|c| c.zeta == 3.0 && c.replicate == 2 && c.variant == Variant::NoBp).unwrap();
        assert_eq!(a.generator(&cfg, 9).seed, b.generator(&cfg, 9).seed);
        assert_ne!(a.generator(&cfg, 9).zeta, b.generator(&cfg, 9).zeta);
        assert_eq!(a.run_config(&cfg, 9).train.seed, b.run_config(&cfg, 9).train.seed);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
