use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::tape::Graph;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::encoder::{encode_input, sample, GaussianPosterior};
use crate::model::heads::{outcome_mean, HeadGroup};
use crate::model::{Channel, GraphInput, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Posterior draws `l` averaged per node.
    pub samples: usize,
    pub seed: u64,
    /// Use posterior means instead of random draws.
    pub zero_noise: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { samples: 100, seed: 0, zero_noise: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tau: Vec<f64>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

impl Model {
    /// Posterior mean and log-variance tensors of every channel for all
    /// nodes, computed without gradient tracking.
    pub fn posterior_values(&self, input: &GraphInput) -> Result<[(Tensor, Tensor); 4]> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let post = encode_input(&mut g, &b, input, &Channel::ALL)?;
        Ok(Channel::ALL.map(|ch| {
            let p = post.get(ch);
            (g.value(p.mean).clone(), g.value(p.log_var).clone())
        }))
    }

    /// Estimates treatment effects for `rows` (all nodes when `None`).
    ///
    /// `z_c` and `z_y` are drawn `l` times from their posteriors; the
    /// treated and control outcome means are averaged over draws and their
    /// difference is the effect estimate.
    pub fn predict_ite(&self, input: &GraphInput, rows: Option<&[usize]>, opts: &PredictOptions) -> Result<Prediction> {
        if opts.samples < 1 {
            return Err(Error::InvalidArgument("prediction needs at least one posterior sample".into()));
        }
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..input.n()).collect();
                &all
            }
        };
        if let Some(&bad) = rows.iter().find(|&&i| i >= input.n()) {
            return Err(Error::InvalidArgument(format!("node {bad} out of range for {} nodes", input.n())));
        }
        let post = self.posterior_values(input)?;
        let pick = |ch: Channel| {
            let (m, lv) = &post[ch.index()];
            (m.select_rows(rows), lv.select_rows(rows))
        };
        let (c_mean, c_lv) = pick(Channel::C);
        let (y_mean, y_lv) = pick(Channel::Y);

        let n = rows.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut y1 = vec![0.0; n];
        let mut y0 = vec![0.0; n];
        let draws = if opts.zero_noise { 1 } else { opts.samples };
        for _ in 0..draws {
            let mut g = Graph::new();
            let b = self.bind(&mut g, false)?;
            let mut draw = |g: &mut Graph, mean: &Tensor, lv: &Tensor| -> Result<_> {
                let p = GaussianPosterior { mean: g.constant(mean.clone()), log_var: g.constant(lv.clone()) };
                if opts.zero_noise || mean.cols() == 0 {
                    return Ok(p.mean);
                }
                let e = g.constant(normal_matrix(&mut rng, mean.rows(), mean.cols()));
                sample(g, p, e)
            };
            let zc = draw(&mut g, &c_mean, &c_lv)?;
            let zy = draw(&mut g, &y_mean, &y_lv)?;
            let m1 = outcome_mean(&mut g, &b, HeadGroup::Decoder, 1, zc, zy)?;
            let m0 = outcome_mean(&mut g, &b, HeadGroup::Decoder, 0, zc, zy)?;
            for (acc, v) in y1.iter_mut().zip(g.value(m1).data()) {
                *acc += v;
            }
            for (acc, v) in y0.iter_mut().zip(g.value(m0).data()) {
                *acc += v;
            }
        }
        let scale = 1.0 / draws as f64;
        y1.iter_mut().chain(y0.iter_mut()).for_each(|v| *v *= scale);
        let tau = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
        Ok(Prediction { tau, y1, y0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::SparseMatrix;
    use crate::model::{LatentLayout, ModelConfig};
    use rand::Rng;
    use std::sync::Arc;

    fn setup() -> (Model, GraphInput) {
        let cfg = ModelConfig { layout: LatentLayout::uniform(2), hidden_dim: 6, head_hidden_dim: 5, gcn_layers: 1, seed: 9 };
        let m = Model::new(cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::matrix(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let adj = SparseMatrix::from_triplets(6, 6, vec![(0, 1, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)]).unwrap();
        let input = GraphInput::new(x, Arc::new(crate::graphdata::normalize_adjacency(&adj))).unwrap();
        (m, input)
    }

    #[test]
    fn zero_noise_uses_posterior_means() {
        let (m, input) = setup();
        let p = m.predict_ite(&input, None, &PredictOptions { samples: 1, seed: 0, zero_noise: true }).unwrap();
        let post = m.posterior_values(&input).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g, false).unwrap();
        let zc = g.constant(post[Channel::C.index()].0.clone());
        let zy = g.constant(post[Channel::Y.index()].0.clone());
        let m1 = outcome_mean(&mut g, &b, HeadGroup::Decoder, 1, zc, zy).unwrap();
        assert_eq!(g.value(m1).data(), p.y1.as_slice());
    }

    #[test]
    fn swapping_outcome_heads_negates_tau() {
        let (mut m, input) = setup();
        let opts = PredictOptions { samples: 3, seed: 5, zero_noise: false };
        let before = m.predict_ite(&input, None, &opts).unwrap();
        for part in ["hidden.w", "hidden.b", "out.w", "out.b"] {
            let a = m.params.value(&format!("dec.y.mean1.{part}")).unwrap().clone();
            let b = m.params.value(&format!("dec.y.mean0.{part}")).unwrap().clone();
            *m.params.value_mut(&format!("dec.y.mean1.{part}")).unwrap() = b;
            *m.params.value_mut(&format!("dec.y.mean0.{part}")).unwrap() = a;
        }
        let after = m.predict_ite(&input, None, &opts).unwrap();
        for (a, b) in before.tau.iter().zip(&after.tau) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn instrument_and_noise_encoders_do_not_matter() {
        let (mut m, input) = setup();
        let opts = PredictOptions { samples: 4, seed: 1, zero_noise: false };
        let before = m.predict_ite(&input, Some(&[0, 2, 5]), &opts).unwrap();
        for ch in [Channel::T, Channel::O] {
            for name in m.encoder_param_names(ch) {
                m.params.value_mut(&name).unwrap().data_mut().iter_mut().for_each(|v| *v = *v * 3.0 + 0.5);
            }
        }
        assert_eq!(before, m.predict_ite(&input, Some(&[0, 2, 5]), &opts).unwrap());
    }

    #[test]
    fn rejects_bad_requests() {
        let (m, input) = setup();
        assert!(m.predict_ite(&input, None, &PredictOptions { samples: 0, ..PredictOptions::default() }).is_err());
        assert!(m.predict_ite(&input, Some(&[6]), &PredictOptions::default()).is_err());
    }

    #[test]
    fn same_seed_same_prediction() {
        let (m, input) = setup();
        let opts = PredictOptions { samples: 5, seed: 3, zero_noise: false };
        assert_eq!(m.predict_ite(&input, None, &opts).unwrap(), m.predict_ite(&input, None, &opts).unwrap());
    }
}
