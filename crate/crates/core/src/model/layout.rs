use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four latent factor channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// Instrumental factors: affect treatment only.
    T,
    /// Confounders: affect treatment and outcome.
    C,
    /// Adjustment (risk) factors: affect outcome only.
    Y,
    /// Noise factors: affect neither.
    O,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::T, Channel::C, Channel::Y, Channel::O];

    pub fn name(self) -> &'static str {
        match self {
            Channel::T => "t",
            Channel::C => "c",
            Channel::Y => "y",
            Channel::O => "o",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "z_{}", self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub d_zt: usize,
    pub d_zc: usize,
    pub d_zy: usize,
    pub d_zo: usize,
}

impl Default for LatentLayout {
    fn default() -> Self {
        LatentLayout::uniform(8)
    }
}

impl LatentLayout {
    pub fn uniform(d: usize) -> Self {
        LatentLayout { d_zt: d, d_zc: d, d_zy: d, d_zo: d }
    }

    pub fn dim(&self, ch: Channel) -> usize {
        match ch {
            Channel::T => self.d_zt,
            Channel::C => self.d_zc,
            Channel::Y => self.d_zy,
            Channel::O => self.d_zo,
        }
    }

    pub fn with_dim(mut self, ch: Channel, d: usize) -> Self {
        match ch {
            Channel::T => self.d_zt = d,
            Channel::C => self.d_zc = d,
            Channel::Y => self.d_zy = d,
            Channel::O => self.d_zo = d,
        }
        self
    }

    pub fn total(&self) -> usize {
        self.d_zt + self.d_zc + self.d_zy + self.d_zo
    }

    /// Channels with a nonzero dimension.
    pub fn active(&self) -> impl Iterator<Item = Channel> + '_ {
        Channel::ALL.into_iter().filter(|&c| self.dim(c) > 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_zc + self.d_zy == 0 {
            return Err(Error::InvalidArgument("d_zc + d_zy must be at least 1 for the outcome head".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layout: LatentLayout,
    /// Hidden GCN layers before the mean/log-variance output layer.
    pub gcn_layers: usize,
    pub hidden_dim: usize,
    pub head_hidden_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layout: LatentLayout::default(), gcn_layers: 1, hidden_dim: 64, head_hidden_dim: 64, seed: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if !(1..=3).contains(&self.gcn_layers) {
            return Err(Error::InvalidArgument(format!("gcn_layers must be 1, 2 or 3, got {}", self.gcn_layers)));
        }
        if self.hidden_dim == 0 || self.head_hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_head_needs_input() {
        let l = LatentLayout { d_zt: 3, d_zc: 0, d_zy: 0, d_zo: 1 };
        assert!(l.validate().is_err());
        assert!(l.with_dim(Channel::Y, 1).validate().is_ok());
    }

    #[test]
    fn layer_count_is_bounded() {
        for (layers, ok) in [(0, false), (1, true), (3, true), (4, false)] {
            let cfg = ModelConfig { gcn_layers: layers, ..ModelConfig::default() };
            assert_eq!(cfg.validate().is_ok(), ok, "{layers}");
        }
    }

    #[test]
    fn active_skips_empty_channels() {
        let l = LatentLayout::uniform(2).with_dim(Channel::O, 0);
        assert_eq!(l.active().collect::<Vec<_>>(), vec![Channel::T, Channel::C, Channel::Y]);
        assert_eq!(l.total(), 6);
    }
}
