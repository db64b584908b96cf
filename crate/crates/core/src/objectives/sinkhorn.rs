//! Entropic Wasserstein-1 distance between two point clouds, computed with
//! log-domain Sinkhorn iterations that are unrolled on the tape.

use serde::{Deserialize, Serialize};

use crate::diffcore::tape::{Graph, Var};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization. `None` uses `relative_epsilon * mean(C)`,
    /// treated as a constant.
    pub epsilon: Option<f64>,
    pub relative_epsilon: f64,
    pub iters: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { epsilon: None, relative_epsilon: 0.1, iters: 20 }
    }
}

impl SinkhornConfig {
    pub fn fixed(epsilon: f64, iters: usize) -> Self {
        SinkhornConfig { epsilon: Some(epsilon), iters, ..SinkhornConfig::default() }
    }
}

/// Transport cost `<P, C>` of the entropic plan between uniform measures on
/// the rows of `a: [n0, d]` and `b: [n1, d]`, with `C` the Euclidean
/// distance matrix.
pub fn sinkhorn_w1(g: &mut Graph, a: Var, b: Var, config: &SinkhornConfig) -> Result<Var> {
    let (n0, n1) = (g.shape(a).0, g.shape(b).0);
    if n0 == 0 || n1 == 0 {
        return Err(Error::Overlap(format!("transport between {n0} and {n1} points")));
    }
    if config.iters == 0 {
        return Err(Error::InvalidArgument("sinkhorn needs at least one iteration".into()));
    }
    let d2 = g.pairwise_sq_dist(a, b)?;
    let cost = g.sqrt(d2)?;
    let eps = match config.epsilon {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(Error::InvalidArgument(format!("sinkhorn epsilon must be positive, got {e}"))),
        None => (config.relative_epsilon * g.value(cost).mean()).max(1e-12),
    };
    let neg_cost = g.scale(cost, -1.0 / eps)?;
    let log_a = -(n0 as f64).ln();
    let log_b = -(n1 as f64).ln();
    let mut pot_g = g.constant(Tensor::zeros(1, n1));
    let mut pot_f = g.constant(Tensor::zeros(n0, 1));
    for _ in 0..config.iters {
        let s = g.add(neg_cost, pot_g)?;
        let l = g.logsumexp_rows(s)?;
        let l = g.scale(l, -1.0)?;
        pot_f = g.offset(l, log_a)?;
        let s = g.add(neg_cost, pot_f)?;
        let l = g.logsumexp_cols(s)?;
        let l = g.scale(l, -1.0)?;
        pot_g = g.offset(l, log_b)?;
    }
    let s = g.add(neg_cost, pot_f)?;
    let s = g.add(s, pot_g)?;
    let plan = g.exp(s)?;
    let weighted = g.mul(plan, cost)?;
    g.sum(weighted)
}

/// Wasserstein balance penalty between control and treated rows of `z_y`.
/// Zero (a constant) when `z_y` has no columns.
pub fn disc_loss(g: &mut Graph, z_y: Var, treatment: &[u8], config: &SinkhornConfig) -> Result<Var> {
    let (n, d) = g.shape(z_y);
    if treatment.len() != n {
        return Err(Error::shape("disc_loss", format!("{} treatments for {n} rows", treatment.len())));
    }
    if d == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let control: Vec<usize> = (0..n).filter(|&i| treatment[i] == 0).collect();
    let treated: Vec<usize> = (0..n).filter(|&i| treatment[i] == 1).collect();
    if control.is_empty() || treated.is_empty() {
        return Err(Error::Overlap(format!(
            "balance penalty needs both arms, got {} control and {} treated",
            control.len(),
            treated.len()
        )));
    }
    let a = g.select_rows(z_y, &control)?;
    let b = g.select_rows(z_y, &treated)?;
    sinkhorn_w1(g, a, b, config)
}

/// Plain-value wrapper around [`sinkhorn_w1`].
pub fn sinkhorn_value(a: &Tensor, b: &Tensor, config: &SinkhornConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = sinkhorn_w1(&mut g, va, vb, config)?;
    Ok(g.value(out).item())
}
