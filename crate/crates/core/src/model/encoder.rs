use std::sync::Arc;

use crate::diffcore::tape::{Graph, Var};
use crate::diffcore::{SparseMatrix, Tensor};
use crate::error::{Error, Result};
use crate::model::{Bound, Channel, GraphInput};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Per-node diagonal Gaussian over one latent channel.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPosterior {
    /// `n x d` means.
    pub mean: Var,
    /// `n x d` log-variances, clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub log_var: Var,
}

impl GaussianPosterior {
    pub fn select_rows(&self, g: &mut Graph, rows: &[usize]) -> Result<Self> {
        Ok(GaussianPosterior { mean: g.select_rows(self.mean, rows)?, log_var: g.select_rows(self.log_var, rows)? })
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.mean).1
    }
}

/// Posteriors of all four channels, indexed by [`Channel`].
#[derive(Clone, Copy, Debug)]
pub struct Posteriors(pub [GaussianPosterior; 4]);

impl Posteriors {
    pub fn get(&self, ch: Channel) -> GaussianPosterior {
        self.0[ch.index()]
    }

    pub fn select_rows(&self, g: &mut Graph, rows: &[usize]) -> Result<Self> {
        let mut out = self.0;
        for p in out.iter_mut() {
            *p = p.select_rows(g, rows)?;
        }
        Ok(Posteriors(out))
    }
}

/// One sampled latent matrix per channel.
#[derive(Clone, Copy, Debug)]
pub struct Latents(pub [Var; 4]);

impl Latents {
    pub fn get(&self, ch: Channel) -> Var {
        self.0[ch.index()]
    }
}

/// Runs the four GCN encoders over the whole graph.
///
/// Each channel applies `gcn_layers` ReLU layers `H <- relu(Â H W)` and then
/// two linear GCN outputs for mean and log-variance that share the last
/// hidden representation. Channels of dimension zero yield `n x 0`
/// posteriors.
pub fn encode(g: &mut Graph, b: &Bound, features: Var, adjacency: &Arc<SparseMatrix>) -> Result<Posteriors> {
    let n = g.shape(features).0;
    check_adjacency(n, adjacency)?;
    let propagated = g.spmm(adjacency, features)?;
    encode_from(g, b, propagated, adjacency, &Channel::ALL)
}

/// Encodes a [`GraphInput`], reusing its cached `Â X`.
pub fn encode_input(g: &mut Graph, b: &Bound, input: &GraphInput, channels: &[Channel]) -> Result<Posteriors> {
    let propagated = g.constant(input.propagated.clone());
    encode_from(g, b, propagated, &input.adjacency, channels)
}

fn check_adjacency(n: usize, adjacency: &SparseMatrix) -> Result<()> {
    if adjacency.n_rows() != n || adjacency.n_cols() != n {
        return Err(Error::shape(
            "encode",
            format!("{n} feature rows vs {}x{} adjacency", adjacency.n_rows(), adjacency.n_cols()),
        ));
    }
    Ok(())
}

/// Encoder body starting from already propagated features `Â X`. Channels
/// not listed come back as `n x 0` posteriors.
pub fn encode_from(
    g: &mut Graph,
    b: &Bound,
    propagated: Var,
    adjacency: &Arc<SparseMatrix>,
    channels: &[Channel],
) -> Result<Posteriors> {
    let n = g.shape(propagated).0;
    check_adjacency(n, adjacency)?;
    let empty = g.constant(Tensor::zeros(n, 0));
    let mut out = [GaussianPosterior { mean: empty, log_var: empty }; 4];
    // The output layers of all channels share one sparse product: Â (H W)
    // for every head, concatenated column-wise and split afterwards.
    let mut projected = Vec::new();
    let mut owners = Vec::new();
    for ch in Channel::ALL {
        if b.layout.dim(ch) == 0 || !channels.contains(&ch) {
            continue;
        }
        let mut ah = propagated;
        for layer in 0..b.gcn_layers {
            if layer > 0 {
                ah = g.spmm(adjacency, ah)?;
            }
            let w = b.get(&format!("enc.{}.gcn{layer}.w", ch.name()))?;
            let lin = g.matmul(ah, w)?;
            ah = g.relu(lin)?;
        }
        projected.push(g.matmul(ah, b.get(&format!("enc.{}.mean.w", ch.name()))?)?);
        projected.push(g.matmul(ah, b.get(&format!("enc.{}.logvar.w", ch.name()))?)?);
        owners.push(ch);
    }
    if owners.is_empty() {
        return Ok(Posteriors(out));
    }
    let stacked = g.concat_cols(&projected)?;
    let spread = g.spmm(adjacency, stacked)?;
    let mut col = 0;
    for ch in owners {
        let d = b.layout.dim(ch);
        let mean = g.slice_cols(spread, col, d)?;
        let lv = g.slice_cols(spread, col + d, d)?;
        col += 2 * d;
        let log_var = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
        out[ch.index()] = GaussianPosterior { mean, log_var };
    }
    Ok(Posteriors(out))
}

/// Reparameterized draw `mean + exp(log_var / 2) * noise`.
pub fn sample(g: &mut Graph, posterior: GaussianPosterior, noise: Var) -> Result<Var> {
    if g.shape(noise) != g.shape(posterior.mean) {
        return Err(Error::shape("sample", format!("noise {:?} vs mean {:?}", g.shape(noise), g.shape(posterior.mean))));
    }
    let half = g.scale(posterior.log_var, 0.5)?;
    let sd = g.exp(half)?;
    let scaled = g.mul(sd, noise)?;
    g.add(posterior.mean, scaled)
}

/// Samples every channel with the supplied noise matrices.
pub fn sample_all(g: &mut Graph, posteriors: &Posteriors, noise: &[Tensor; 4]) -> Result<Latents> {
    let mut z = [posteriors.0[0].mean; 4];
    for ch in Channel::ALL {
        let p = posteriors.get(ch);
        z[ch.index()] = if p.dim(g) == 0 {
            p.mean
        } else {
            let e = g.constant(noise[ch.index()].clone());
            sample(g, p, e)?
        };
    }
    Ok(Latents(z))
}
