use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::tape::{Graph, Var};
use crate::diffcore::{ParamStore, SparseMatrix, Tensor};
use crate::error::{Error, Result};
use crate::graphdata::{normalize_adjacency, Dataset};
use crate::model::{Channel, ModelConfig};

/// Prefixes of the four outcome-head networks, in `mean1, mean0, logvar1,
/// logvar0` order.
pub(crate) const OUTCOME_HEADS: [&str; 4] = ["mean1", "mean0", "logvar1", "logvar0"];

/// Features and normalized adjacency, the two inputs every encoder pass
/// needs.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub features: Tensor,
    pub adjacency: Arc<SparseMatrix>,
    /// `Â X`, which does not depend on any parameter.
    pub propagated: Tensor,
}

impl GraphInput {
    /// `adjacency` must already be normalized.
    pub fn new(features: Tensor, adjacency: Arc<SparseMatrix>) -> Result<Self> {
        let propagated = adjacency.matmul(&features)?;
        Ok(GraphInput { features, adjacency, propagated })
    }

    /// Builds the input from raw 0/1 adjacency, applying self-loops and
    /// symmetric normalization.
    pub fn from_dataset(ds: &Dataset) -> Self {
        GraphInput::new(ds.features.clone(), Arc::new(normalize_adjacency(&ds.adjacency)))
            .expect("validated dataset has matching shapes")
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    bias: bool,
}

fn mlp_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, hidden: usize, output: usize) {
    out.push(ParamSpec { name: format!("{prefix}.hidden.w"), rows: input, cols: hidden, bias: false });
    out.push(ParamSpec { name: format!("{prefix}.hidden.b"), rows: 1, cols: hidden, bias: true });
    out.push(ParamSpec { name: format!("{prefix}.out.w"), rows: hidden, cols: output, bias: false });
    out.push(ParamSpec { name: format!("{prefix}.out.b"), rows: 1, cols: output, bias: true });
}

fn param_specs(config: &ModelConfig, k: usize) -> Vec<ParamSpec> {
    let l = &config.layout;
    let (h, hh) = (config.hidden_dim, config.head_hidden_dim);
    let mut specs = Vec::new();
    for ch in l.active() {
        let mut input = k;
        for layer in 0..config.gcn_layers {
            specs.push(ParamSpec { name: format!("enc.{}.gcn{layer}.w", ch.name()), rows: input, cols: h, bias: false });
            input = h;
        }
        for head in ["mean", "logvar"] {
            let name = format!("enc.{}.{head}.w", ch.name());
            specs.push(ParamSpec { name, rows: h, cols: l.dim(ch), bias: false });
        }
    }
    let total = l.total();
    specs.push(ParamSpec { name: "dec.x.hidden.w".into(), rows: total, cols: hh, bias: false });
    specs.push(ParamSpec { name: "dec.x.hidden.b".into(), rows: 1, cols: hh, bias: true });
    for head in ["mean", "logvar"] {
        specs.push(ParamSpec { name: format!("dec.x.{head}.w"), rows: hh, cols: k, bias: false });
        specs.push(ParamSpec { name: format!("dec.x.{head}.b"), rows: 1, cols: k, bias: true });
    }
    let t_in = l.d_zt + l.d_zc;
    let y_in = l.d_zc + l.d_zy;
    for group in ["dec", "aux"] {
        mlp_specs(&mut specs, &format!("{group}.t"), t_in, hh, 1);
        for head in OUTCOME_HEADS {
            mlp_specs(&mut specs, &format!("{group}.y.{head}"), y_in, hh, 1);
        }
    }
    specs
}

/// Network weights plus the configuration that fixes their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Feature dimension the model was built for.
    pub k: usize,
    pub params: ParamStore,
}

impl Model {
    /// Glorot-uniform weights and zero biases, drawn from `config.seed`.
    pub fn new(config: ModelConfig, k: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for spec in param_specs(&config, k) {
            let n = spec.rows * spec.cols;
            let data = if spec.bias || n == 0 {
                vec![0.0; n]
            } else {
                let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
            };
            params.insert(spec.name, Tensor::matrix(spec.rows, spec.cols, data)?)?;
        }
        Ok(Model { config, k, params })
    }

    /// Wraps previously trained parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, k: usize, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config, k);
        if specs.len() != params.len() {
            return Err(Error::Format(format!("expected {} parameters, found {}", specs.len(), params.len())));
        }
        for spec in &specs {
            let v = params
                .value(&spec.name)
                .ok_or_else(|| Error::Format(format!("missing parameter '{}'", spec.name)))?;
            if v.shape() != [spec.rows, spec.cols] {
                return Err(Error::Format(format!(
                    "parameter '{}' has shape {:?}, expected [{}, {}]",
                    spec.name,
                    v.shape(),
                    spec.rows,
                    spec.cols
                )));
            }
        }
        Ok(Model { config, k, params })
    }

    /// Puts every parameter on `g`. With `trainable` false the parameters
    /// are constants and no gradient is tracked.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Bound> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for name in self.params.names() {
            let v = if trainable { g.param(&self.params, name)? } else { g.frozen_param(&self.params, name)? };
            vars.insert(name.to_string(), v);
        }
        Ok(Bound { vars, layout: self.config.layout, gcn_layers: self.config.gcn_layers })
    }

    /// Parameter names belonging to one encoder channel.
    pub fn encoder_param_names(&self, ch: Channel) -> Vec<String> {
        let prefix = format!("enc.{}.", ch.name());
        self.params.names().filter(|n| n.starts_with(&prefix)).map(str::to_string).collect()
    }
}

/// Parameters of a [`Model`] bound to one [`Graph`].
#[derive(Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
    pub(crate) layout: crate::model::LatentLayout,
    pub(crate) gcn_layers: usize,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::InvalidArgument(format!("unbound parameter '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatentLayout;

    #[test]
    fn zero_channel_has_no_encoder() {
        let cfg = ModelConfig { layout: LatentLayout::uniform(2).with_dim(Channel::O, 0), ..ModelConfig::default() };
        let m = Model::new(cfg, 5).unwrap();
        assert!(m.encoder_param_names(Channel::O).is_empty());
        assert_eq!(m.encoder_param_names(Channel::T).len(), 3);
        assert_eq!(m.params.value("dec.x.hidden.w").unwrap().shape(), &[6, 64]);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let m = Model::new(ModelConfig { hidden_dim: 10, ..ModelConfig::default() }, 6).unwrap();
        let w = m.params.value("enc.c.gcn0.w").unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(w.data().iter().any(|&v| v != 0.0));
        assert!(m.params.value("aux.y.mean1.out.b").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seed_controls_initialization() {
        let a = Model::new(ModelConfig { seed: 1, ..ModelConfig::default() }, 4).unwrap();
        let b = Model::new(ModelConfig { seed: 1, ..ModelConfig::default() }, 4).unwrap();
        let c = Model::new(ModelConfig { seed: 2, ..ModelConfig::default() }, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = Model::new(ModelConfig::default(), 4).unwrap();
        assert!(Model::from_params(m.config.clone(), 4, m.params.clone()).is_ok());
        assert!(Model::from_params(m.config.clone(), 5, m.params.clone()).is_err());
        let other = ModelConfig { layout: LatentLayout::uniform(3), ..ModelConfig::default() };
        assert!(Model::from_params(other, 4, m.params).is_err());
    }
}
