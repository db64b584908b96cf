//! Run directories: `config.json`, `train_log.csv`, `checkpoint.json`,
//! `report.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_with_input, Metrics};
use crate::graphdata::{Dataset, SplitIndex, SplitName};
use crate::model::{GraphInput, Model, ModelConfig, PredictOptions};
use crate::seeding::derive_seed;
use crate::trainer::{train, EpochRecord, TrainConfig, TrainOutcome};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.json";

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.train.effective_model(&self.model).validate()
    }

    pub fn predict_options(&self) -> PredictOptions {
        PredictOptions { samples: self.train.eval_samples, seed: derive_seed(self.train.seed, &[0xe7a1]), zero_noise: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub metrics: BTreeMap<SplitName, Metrics>,
    pub config: RunConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_nll_y: Option<f64>,
}

impl RunReport {
    pub fn test_pehe(&self) -> Option<f64> {
        self.metrics.get(&SplitName::Test).and_then(|m| m.pehe_root)
    }
}

/// Metrics for each requested non-empty split.
pub fn evaluate_splits(
    model: &Model,
    dataset: &Dataset,
    split: &SplitIndex,
    options: &PredictOptions,
    which: &[SplitName],
) -> Result<BTreeMap<SplitName, Metrics>> {
    let input = Arc::new(GraphInput::from_dataset(dataset));
    let mut out = BTreeMap::new();
    for &name in which {
        let rows = split.get(name);
        if !rows.is_empty() {
            out.insert(name, evaluate_with_input(model, &input, dataset, name, options, rows)?);
        }
    }
    Ok(out)
}

/// Trains and evaluates one configuration.
pub fn run(dataset: &Dataset, split: &SplitIndex, config: &RunConfig, eval: &[SplitName]) -> Result<(TrainOutcome, RunReport)> {
    config.validate()?;
    let outcome = train(dataset, split, &config.model, &config.train)?;
    let metrics = evaluate_splits(&outcome.model, dataset, split, &config.predict_options(), eval)?;
    let report = RunReport {
        metrics,
        config: config.clone(),
        seed: config.train.seed,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        best_val_nll_y: outcome.best_val_nll_y,
    };
    Ok((outcome, report))
}

pub fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "elbo", "treat", "pred", "indep", "disc", "l2", "total"])?;
    for r in log {
        let l = &r.losses;
        let mut rec = vec![r.epoch.to_string()];
        rec.extend([l.elbo, l.treat, l.pred, l.indep, l.disc, l.l2, l.total].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes all four run files into `dir`, creating it if needed.
pub fn write_run(dir: &Path, config: &RunConfig, outcome: &TrainOutcome, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), config)?;
    write_train_log(&dir.join(LOG_FILE), &outcome.log)?;
    let ck = Checkpoint::capture(&outcome.model.params, Some(&outcome.optimizer));
    fs::write(dir.join(CHECKPOINT_FILE), ck.to_json()? + "\n")?;
    write_json(&dir.join(REPORT_FILE), report)?;
    Ok(())
}

pub fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read config {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the trained model from a run directory.
pub fn load_model(dir: &Path) -> Result<(RunConfig, Model)> {
    if !dir.is_dir() {
        return Err(Error::Format(format!("run directory {} does not exist", dir.display())));
    }
    let config = read_run_config(&dir.join(CONFIG_FILE))?;
    let ck = Checkpoint::from_json(&fs::read_to_string(dir.join(CHECKPOINT_FILE))?)?;
    let params = ck.param_store()?;
    let k = params
        .value("dec.x.mean.w")
        .ok_or_else(|| Error::Format("checkpoint lacks dec.x.mean.w".into()))?
        .cols();
    let model = Model::from_params(config.train.effective_model(&config.model), k, params)?;
    Ok((config, model))
}

pub fn read_report(dir: &Path) -> Result<RunReport> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(REPORT_FILE))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatentLayout;
    use crate::synthgen::{generate, GenConfig};

    #[test]
    fn run_directory_round_trip() {
        let ds = generate(&GenConfig { n: 50, m_t: 2, m_c: 2, m_y: 2, m_o: 2, zeta: 1.0, seed: 2, split_fractions: [0.6, 0.2, 0.2] })
            .unwrap();
        let split = ds.splits.clone().unwrap();
        let config = RunConfig {
            model: ModelConfig { layout: LatentLayout::uniform(2), hidden_dim: 6, head_hidden_dim: 6, gcn_layers: 1, seed: 4 },
            train: TrainConfig { epochs: 2, eval_samples: 3, reg_sample: None, ..TrainConfig::default() },
        };
        let (outcome, report) = run(&ds, &split, &config, &SplitName::ALL).unwrap();
        assert_eq!(report.metrics.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &config, &outcome, &report).unwrap();
        let (cfg, model) = load_model(dir.path()).unwrap();
        assert_eq!(cfg, config);
        assert_eq!(model, outcome.model);
        assert_eq!(read_report(dir.path()).unwrap(), report);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert!(log.starts_with("epoch,elbo,treat,pred,indep,disc,l2,total\n"));
        assert_eq!(log.lines().count(), 3);
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert!(json["test"]["pehe_root"].is_number());
        assert!(json["test"]["n"].is_number());
        assert_eq!(json["seed"], 0);
    }

    #[test]
    fn missing_run_dir() {
        assert!(load_model(Path::new("/nonexistent/run")).is_err());
    }
}
