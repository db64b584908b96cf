use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Channel, LatentLayout, ModelConfig};
use crate::objectives::{Bandwidth, LossWeights, RegularizerOptions, SinkhornConfig};

/// Ablation variants of the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// No HSIC independence penalty (`α₁ = 0`).
    NoHsic,
    /// No balance penalty (`α₂ = 0`).
    NoBp,
    /// One confounder-like channel holding all latent dimensions; no
    /// disentanglement.
    SingleFactor,
    ZeroZt,
    ZeroZc,
    ZeroZy,
    ZeroZo,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoHsic,
        Variant::NoBp,
        Variant::SingleFactor,
        Variant::ZeroZt,
        Variant::ZeroZc,
        Variant::ZeroZy,
        Variant::ZeroZo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHsic => "no_hsic",
            Variant::NoBp => "no_bp",
            Variant::SingleFactor => "single_factor",
            Variant::ZeroZt => "zero_zt",
            Variant::ZeroZc => "zero_zc",
            Variant::ZeroZy => "zero_zy",
            Variant::ZeroZo => "zero_zo",
        }
    }

    /// Latent layout the variant trains with.
    pub fn layout(self, base: LatentLayout) -> LatentLayout {
        match self {
            Variant::SingleFactor => LatentLayout { d_zt: 0, d_zc: base.total(), d_zy: 0, d_zo: 0 },
            Variant::ZeroZt => base.with_dim(Channel::T, 0),
            Variant::ZeroZc => base.with_dim(Channel::C, 0),
            Variant::ZeroZy => base.with_dim(Channel::Y, 0),
            Variant::ZeroZo => base.with_dim(Channel::O, 0),
            Variant::Full | Variant::NoHsic | Variant::NoBp => base,
        }
    }

    /// Loss weights the variant trains with.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        match self {
            Variant::NoHsic => LossWeights { alpha_1: 0.0, ..base },
            Variant::NoBp => LossWeights { alpha_2: 0.0, ..base },
            _ => base,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub alpha_t: f64,
    pub alpha_y: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub lambda_l2: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; `None`
    /// trains for the full `epochs` and keeps the best-validation weights.
    pub patience: Option<usize>,
    /// Posterior draws per node at evaluation time.
    pub eval_samples: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Training nodes drawn each epoch for HSIC and the balance penalty;
    /// `None` uses every training node.
    pub reg_sample: Option<usize>,
    pub sinkhorn_iters: usize,
    /// Sinkhorn epsilon as a fraction of the mean transport cost.
    pub sinkhorn_relative_epsilon: f64,
    /// Parameter-name prefixes held fixed during training.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            alpha_t: 100.0,
            alpha_y: 100.0,
            alpha_1: 1.0,
            alpha_2: 1.0,
            lambda_l2: 5e-5,
            epochs: 500,
            patience: Some(100),
            eval_samples: 100,
            seed: 0,
            variant: Variant::Full,
            reg_sample: Some(512),
            sinkhorn_iters: 20,
            sinkhorn_relative_epsilon: 0.1,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Weights as configured, before the variant is applied.
    pub fn base_weights(&self) -> LossWeights {
        LossWeights {
            alpha_t: self.alpha_t,
            alpha_y: self.alpha_y,
            alpha_1: self.alpha_1,
            alpha_2: self.alpha_2,
            lambda_l2: self.lambda_l2,
        }
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.variant.weights(self.base_weights())
    }

    pub fn effective_model(&self, model: &ModelConfig) -> ModelConfig {
        ModelConfig { layout: self.variant.layout(model.layout), ..model.clone() }
    }

    pub fn regularizers(&self) -> RegularizerOptions {
        RegularizerOptions {
            bandwidth: Bandwidth::Median,
            sinkhorn: SinkhornConfig {
                epsilon: None,
                relative_epsilon: self.sinkhorn_relative_epsilon,
                iters: self.sinkhorn_iters,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::InvalidArgument("eval_samples must be at least 1".into()));
        }
        if self.sinkhorn_iters == 0 || !(self.sinkhorn_relative_epsilon > 0.0) {
            return Err(Error::InvalidArgument("sinkhorn needs iterations and a positive epsilon".into()));
        }
        if let Some(s) = self.reg_sample {
            if s < 4 {
                return Err(Error::InvalidArgument(format!("reg_sample must be at least 4, got {s}")));
            }
        }
        self.base_weights().validate()
    }
}
