use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::tape::Graph;
use crate::diffcore::{adam_step, AdamConfig, AdamState, Tensor};
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, SplitIndex};
use crate::model::{self, Channel, GraphInput, Model, ModelConfig};
use crate::objectives::{breakdown, gaussian_nll, model_objective, Batch, LossBreakdown, LossWeights, RegularizerOptions};
use crate::seeding::derive_seed;
use crate::trainer::TrainConfig;

/// Losses of one epoch plus the validation loss after its update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub val_nll_y: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation loss (the last epoch
    /// when there is no validation split).
    pub model: Model,
    /// Optimizer state captured together with `model`.
    pub optimizer: AdamState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll_y: Option<f64>,
}

/// Factual outcome loss of the auxiliary outcome head at posterior means.
pub fn validation_nll_y(model: &Model, input: &GraphInput, dataset: &Dataset, rows: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false)?;
    let post = model::encode_input(&mut g, &b, input, &[Channel::C, Channel::Y])?.select_rows(&mut g, rows)?;
    let t: Vec<u8> = rows.iter().map(|&i| dataset.treatment[i]).collect();
    let (m, lv) = model::aux_y(&mut g, &b, &t, post.get(Channel::C).mean, post.get(Channel::Y).mean)?;
    let y = g.constant(Tensor::column(rows.iter().map(|&i| dataset.outcome[i]).collect()));
    let nll = gaussian_nll(&mut g, y, m, lv)?;
    Ok(g.value(nll).item())
}

fn noise_for(rng: &mut ChaCha8Rng, rows: usize, layout: &model::LatentLayout) -> [Tensor; 4] {
    Channel::ALL.map(|ch| {
        let d = layout.dim(ch);
        let data = (0..rows * d).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::matrix(rows, d, data).expect("shape")
    })
}

/// Positions (into the training rows) used by the set-level regularizers.
fn regularizer_rows(rng: &mut ChaCha8Rng, t: &[u8], sample: Option<usize>) -> Option<Vec<usize>> {
    let size = sample?;
    if size >= t.len() {
        return None;
    }
    for _ in 0..16 {
        let mut pos = index::sample(rng, t.len(), size).into_vec();
        pos.sort_unstable();
        let treated = pos.iter().filter(|&&p| t[p] == 1).count();
        if treated > 0 && treated < pos.len() {
            return Some(pos);
        }
    }
    None
}

fn with_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Step-wise training state. [`train`] drives it to completion; tests and
/// tools can step it manually and inspect the model between epochs.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    split: &'a SplitIndex,
    config: TrainConfig,
    input: Arc<GraphInput>,
    weights: LossWeights,
    reg: RegularizerOptions,
    model: Model,
    optimizer: AdamState,
    frozen: Vec<(String, Tensor)>,
    train_t: Vec<u8>,
    rng: ChaCha8Rng,
    log: Vec<EpochRecord>,
    best: Option<(f64, usize, Model, AdamState)>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, split: &'a SplitIndex, model_config: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        dataset.validate()?;
        config.validate()?;
        split.validate(dataset.n())?;
        let rows = &split.train;
        let treated = rows.iter().filter(|&&i| dataset.treatment[i] == 1).count();
        if treated == 0 || treated == rows.len() {
            return Err(Error::Overlap(format!("training split has {treated} treated of {} nodes", rows.len())));
        }
        let model = Model::new(config.effective_model(model_config), dataset.k())?;
        let adam_cfg = AdamConfig { learning_rate: config.learning_rate, weight_decay: config.lambda_l2, ..AdamConfig::default() };
        let optimizer = AdamState::new(&model.params, adam_cfg);
        let mut trainer = Trainer {
            dataset,
            split,
            config: config.clone(),
            input: Arc::new(GraphInput::from_dataset(dataset)),
            weights: config.effective_weights(),
            reg: config.regularizers(),
            model,
            optimizer,
            frozen: Vec::new(),
            train_t: rows.iter().map(|&i| dataset.treatment[i]).collect(),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x7a])),
            log: Vec::with_capacity(config.epochs),
            best: None,
        };
        trainer.snapshot_frozen();
        Ok(trainer)
    }

    fn snapshot_frozen(&mut self) {
        let prefixes = &self.config.frozen;
        self.frozen = self
            .model
            .params
            .iter()
            .filter(|(name, _)| prefixes.iter().any(|p| name.starts_with(p.as_str())))
            .map(|(name, p)| (name.to_string(), p.value.clone()))
            .collect();
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Replaces the current weights (for example to start from chosen
    /// values). Frozen parameters are held at the new values.
    pub fn set_model(&mut self, model: Model) -> Result<()> {
        if model.config != self.model.config || model.k != self.model.k {
            return Err(Error::InvalidArgument("replacement model has a different configuration".into()));
        }
        self.model = model;
        self.snapshot_frozen();
        Ok(())
    }

    pub fn input(&self) -> &Arc<GraphInput> {
        &self.input
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.log.len()
    }

    /// True once `epochs` are done or patience has run out.
    pub fn finished(&self) -> bool {
        if self.epoch() >= self.config.epochs {
            return true;
        }
        match (self.config.patience, &self.best) {
            (Some(p), Some((_, best_epoch, ..))) => self.epoch() - best_epoch >= p,
            _ => false,
        }
    }

    /// Runs one epoch: forward over the full graph, one Adam step, then the
    /// validation score of the updated weights.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch() + 1;
        let rows = &self.split.train;
        let noise = noise_for(&mut self.rng, rows.len(), &self.model.config.layout);
        let reg_rows = regularizer_rows(&mut self.rng, &self.train_t, self.config.reg_sample);
        let batch = Batch {
            input: &self.input,
            treatment: &self.dataset.treatment,
            outcome: &self.dataset.outcome,
            rows,
            reg_rows: reg_rows.as_deref(),
        };
        let mut g = Graph::new();
        let b = self.model.bind(&mut g, true)?;
        let obj = model_objective(&mut g, &b, &batch, &noise, &self.weights, &self.reg).map_err(|e| with_epoch(e, epoch))?;
        let l2 = self.weights.lambda_l2 * self.model.params.sq_norm();
        let losses = breakdown(&g, &obj.terms, &self.weights, l2);
        if let Some(term) = losses.non_finite_term() {
            return Err(Error::NonFinite(format!("epoch {epoch}: loss term '{term}'")));
        }
        g.backward(obj.loss, &mut self.model.params).map_err(|e| with_epoch(e, epoch))?;
        adam_step(&mut self.model.params, &mut self.optimizer)?;
        for (name, value) in &self.frozen {
            *self.model.params.value_mut(name).expect("frozen name exists") = value.clone();
        }

        let val = if self.split.val.is_empty() {
            None
        } else {
            Some(validation_nll_y(&self.model, &self.input, self.dataset, &self.split.val).map_err(|e| with_epoch(e, epoch))?)
        };
        let record = EpochRecord { epoch, losses, val_nll_y: val };
        self.log.push(record);

        let score = val.unwrap_or(f64::NEG_INFINITY);
        let improved = self.best.as_ref().is_none_or(|(s, ..)| score < *s || val.is_none());
        if improved {
            self.best = Some((score, epoch, self.model.clone(), self.optimizer.clone()));
        }
        Ok(record)
    }

    /// Best-validation weights and the full log.
    pub fn finish(self) -> Result<TrainOutcome> {
        let (score, best_epoch, model, optimizer) =
            self.best.ok_or_else(|| Error::InvalidArgument("no epoch has run".into()))?;
        Ok(TrainOutcome {
            model,
            optimizer,
            log: self.log,
            best_epoch,
            best_val_nll_y: if self.split.val.is_empty() { None } else { Some(score) },
        })
    }
}

/// Trains a model on the training split, tracking the validation split.
///
/// Each epoch runs the encoders on the full graph, evaluates the objective
/// over training nodes, takes one Adam step, and scores the auxiliary
/// outcome head on validation nodes. The best-scoring weights are kept and
/// training stops after `patience` epochs without improvement.
pub fn train(dataset: &Dataset, split: &SplitIndex, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, split, model_config, config)?;
    while !trainer.finished() {
        trainer.step()?;
    }
    trainer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatentLayout;
    use crate::synthgen::{generate, GenConfig};

    fn tiny() -> (Dataset, ModelConfig, TrainConfig) {
        let ds = generate(&GenConfig { n: 80, m_t: 2, m_c: 2, m_y: 2, m_o: 2, zeta: 1.0, seed: 5, split_fractions: [0.6, 0.2, 0.2] })
            .unwrap();
        let mc = ModelConfig { layout: LatentLayout::uniform(2), hidden_dim: 8, head_hidden_dim: 8, gcn_layers: 1, seed: 1 };
        let tc = TrainConfig { epochs: 3, learning_rate: 1e-2, reg_sample: None, ..TrainConfig::default() };
        (ds, mc, tc)
    }

    #[test]
    fn one_epoch_is_one_step() {
        let (ds, mc, tc) = tiny();
        let out = train(&ds, ds.splits.as_ref().unwrap(), &mc, &TrainConfig { epochs: 1, ..tc }).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.optimizer.step, 1);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn deterministic_under_seed() {
        let (ds, mc, tc) = tiny();
        let split = ds.splits.clone().unwrap();
        let a = train(&ds, &split, &mc, &tc).unwrap();
        let b = train(&ds, &split, &mc, &tc).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn best_epoch_has_lowest_validation_loss() {
        let (ds, mc, tc) = tiny();
        let out = train(&ds, ds.splits.as_ref().unwrap(), &mc, &TrainConfig { epochs: 12, ..tc }).unwrap();
        let best = out.log[out.best_epoch - 1].val_nll_y.unwrap();
        assert!(out.log.iter().all(|r| r.val_nll_y.unwrap() >= best));
        assert_eq!(out.best_val_nll_y, Some(best));
        assert!(out.log.iter().all(|r| r.losses.total.is_finite()));
    }

    #[test]
    fn patience_stops_early() {
        let (ds, mc, tc) = tiny();
        let cfg = TrainConfig { epochs: 200, patience: Some(2), learning_rate: 0.5, ..tc };
        let out = train(&ds, ds.splits.as_ref().unwrap(), &mc, &cfg).unwrap();
        assert!(out.log.len() < 200);
        assert_eq!(out.log.len(), out.best_epoch + 2);
    }

    #[test]
    fn no_hsic_logs_zero_indep() {
        let (ds, mc, tc) = tiny();
        let cfg = TrainConfig { variant: crate::trainer::Variant::NoHsic, ..tc };
        let out = train(&ds, ds.splits.as_ref().unwrap(), &mc, &cfg).unwrap();
        assert!(out.log.iter().all(|r| r.losses.indep == 0.0 && r.losses.disc > 0.0));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (ds, mc, tc) = tiny();
        let cfg = TrainConfig { frozen: vec!["enc.".into()], ..tc };
        let out = train(&ds, ds.splits.as_ref().unwrap(), &mc, &cfg).unwrap();
        let init = Model::new(mc.clone(), ds.k()).unwrap();
        assert_eq!(out.model.params.value("enc.c.gcn0.w"), init.params.value("enc.c.gcn0.w"));
        assert_ne!(out.model.params.value("dec.y.mean1.out.w"), init.params.value("dec.y.mean1.out.w"));
    }

    #[test]
    fn single_arm_training_split_is_rejected() {
        let (mut ds, mc, tc) = tiny();
        let split = ds.splits.clone().unwrap();
        for &i in &split.train {
            ds.treatment[i] = 1;
        }
        assert!(matches!(train(&ds, &split, &mc, &tc), Err(Error::Overlap(_))));
    }
}
