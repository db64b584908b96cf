//! Effect-estimation metrics and split-level evaluation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::tape::Graph;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, SplitName};
use crate::model::{self, Channel, GraphInput, Model, PredictOptions};
use crate::objectives::gaussian_nll;

fn check_lengths(tau_hat: &[f64], tau: &[f64]) -> Result<()> {
    if tau_hat.len() != tau.len() {
        return Err(Error::InvalidArgument(format!("{} estimates for {} true effects", tau_hat.len(), tau.len())));
    }
    if tau.is_empty() {
        return Err(Error::InvalidArgument("no effects to evaluate".into()));
    }
    Ok(())
}

/// `sqrt(mean((tau_hat - tau)^2))`
pub fn pehe_root(tau_hat: &[f64], tau: &[f64]) -> Result<f64> {
    check_lengths(tau_hat, tau)?;
    let mse = tau_hat.iter().zip(tau).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / tau.len() as f64;
    Ok(mse.sqrt())
}

/// `|mean(tau_hat) - mean(tau)|`
pub fn ate_error(tau_hat: &[f64], tau: &[f64]) -> Result<f64> {
    check_lengths(tau_hat, tau)?;
    let n = tau.len() as f64;
    Ok((tau_hat.iter().sum::<f64>() / n - tau.iter().sum::<f64>() / n).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub split: SplitName,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pehe_root: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ate_error: Option<f64>,
    /// Factual outcome NLL, reported when ground truth is unavailable.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nll_y: Option<f64>,
    #[serde(rename = "n")]
    pub n_evaluated: usize,
}

/// Anything that produces per-node effect estimates.
pub trait IteEstimator {
    fn estimate(&self, dataset: &Dataset, rows: &[usize]) -> Result<Vec<f64>>;
}

/// A trained model with its prepared graph input.
pub struct ModelEstimator<'a> {
    pub model: &'a Model,
    pub input: Arc<GraphInput>,
    pub options: PredictOptions,
}

impl IteEstimator for ModelEstimator<'_> {
    fn estimate(&self, _dataset: &Dataset, rows: &[usize]) -> Result<Vec<f64>> {
        Ok(self.model.predict_ite(&self.input, Some(rows), &self.options)?.tau)
    }
}

fn split_rows(dataset: &Dataset, split: SplitName) -> Result<&[usize]> {
    let splits = dataset.splits.as_ref().ok_or_else(|| Error::InvalidArgument("dataset has no splits".into()))?;
    let rows = splits.get(split);
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!("split '{split}' is empty")));
    }
    Ok(rows)
}

/// Metrics of any estimator on given rows; requires ground truth.
pub fn evaluate_estimator(est: &dyn IteEstimator, dataset: &Dataset, split: SplitName, rows: &[usize]) -> Result<Metrics> {
    let tau = dataset.ite().ok_or_else(|| Error::InvalidArgument("dataset has no ground-truth effects".into()))?;
    let tau: Vec<f64> = rows.iter().map(|&i| tau[i]).collect();
    let tau_hat = est.estimate(dataset, rows)?;
    Ok(Metrics {
        split,
        pehe_root: Some(pehe_root(&tau_hat, &tau)?),
        ate_error: Some(ate_error(&tau_hat, &tau)?),
        nll_y: None,
        n_evaluated: rows.len(),
    })
}

/// Factual outcome NLL of the generative outcome head at posterior means.
pub fn factual_nll_y(model: &Model, input: &GraphInput, dataset: &Dataset, rows: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false)?;
    let post = model::encode_input(&mut g, &b, input, &[Channel::C, Channel::Y])?.select_rows(&mut g, rows)?;
    let t: Vec<u8> = rows.iter().map(|&i| dataset.treatment[i]).collect();
    let (zc, zy) = (post.get(Channel::C).mean, post.get(Channel::Y).mean);
    let (m, lv) = model::decode_y(&mut g, &b, &t, zc, zy)?;
    let y = g.constant(Tensor::column(rows.iter().map(|&i| dataset.outcome[i]).collect()));
    let nll = gaussian_nll(&mut g, y, m, lv)?;
    Ok(g.value(nll).item())
}

/// Evaluates a model on one split. Without ground truth only the factual
/// outcome NLL is reported.
pub fn evaluate(model: &Model, dataset: &Dataset, split: SplitName, options: &PredictOptions) -> Result<Metrics> {
    let rows = split_rows(dataset, split)?;
    let input = Arc::new(GraphInput::from_dataset(dataset));
    evaluate_with_input(model, &input, dataset, split, options, rows)
}

pub fn evaluate_with_input(
    model: &Model,
    input: &Arc<GraphInput>,
    dataset: &Dataset,
    split: SplitName,
    options: &PredictOptions,
    rows: &[usize],
) -> Result<Metrics> {
    if dataset.truth.is_none() {
        return Ok(Metrics {
            split,
            pehe_root: None,
            ate_error: None,
            nll_y: Some(factual_nll_y(model, input, dataset, rows)?),
            n_evaluated: rows.len(),
        });
    }
    let est = ModelEstimator { model, input: Arc::clone(input), options: *options };
    evaluate_estimator(&est, dataset, split, rows)
}
