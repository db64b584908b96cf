//! KL divergence to the standard-normal prior and the negative
//! log-likelihoods of the generative and auxiliary heads.

use std::f64::consts::PI;

use crate::diffcore::tape::{Graph, Var};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::GaussianPosterior;

fn zero(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}

fn check_rows(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<usize> {
    let (ra, rb) = (g.shape(a).0, g.shape(b).0);
    if ra != rb {
        return Err(Error::shape(op, format!("{ra} vs {rb} rows")));
    }
    if ra == 0 {
        return Err(Error::shape(op, "no rows"));
    }
    Ok(ra)
}

/// `KL(q || N(0, I))` per node, averaged over rows:
/// `0.5 * sum_j (mu^2 + sigma^2 - log sigma^2 - 1)`.
///
/// A zero-width posterior contributes exactly 0.
pub fn kl_diag_gaussian(g: &mut Graph, post: GaussianPosterior) -> Result<Var> {
    check_rows(g, post.mean, post.log_var, "kl_diag_gaussian")?;
    if post.dim(g) == 0 {
        return Ok(zero(g));
    }
    let mu2 = g.mul(post.mean, post.mean)?;
    let var = g.exp(post.log_var)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, post.log_var)?;
    let s = g.offset(s, -1.0)?;
    let per_node = g.sum_rows(s)?;
    let m = g.mean(per_node)?;
    g.scale(m, 0.5)
}

/// Diagonal Gaussian negative log-likelihood, summed over columns and
/// averaged over rows.
pub fn gaussian_nll(g: &mut Graph, value: Var, mean: Var, log_var: Var) -> Result<Var> {
    check_rows(g, value, mean, "gaussian_nll")?;
    if g.shape(value) != g.shape(mean) || g.shape(mean) != g.shape(log_var) {
        return Err(Error::shape(
            "gaussian_nll",
            format!("{:?}, {:?}, {:?}", g.shape(value), g.shape(mean), g.shape(log_var)),
        ));
    }
    let d = g.sub(value, mean)?;
    let d2 = g.mul(d, d)?;
    let neg = g.scale(log_var, -1.0)?;
    let prec = g.exp(neg)?;
    let quad = g.mul(d2, prec)?;
    let s = g.add(quad, log_var)?;
    let s = g.offset(s, (2.0 * PI).ln())?;
    let per_node = g.sum_rows(s)?;
    let m = g.mean(per_node)?;
    g.scale(m, 0.5)
}

/// Bernoulli negative log-likelihood of 0/1 targets given logits,
/// `softplus(l) - t * l`, averaged over rows.
pub fn bernoulli_nll_logits(g: &mut Graph, targets: Var, logits: Var) -> Result<Var> {
    check_rows(g, targets, logits, "bernoulli_nll")?;
    let sp = g.softplus(logits)?;
    let tl = g.mul(targets, logits)?;
    let s = g.sub(sp, tl)?;
    g.mean(s)
}

/// `[n, 1]` column of treatment indicators.
pub fn treatment_column(t: &[u8]) -> Tensor {
    Tensor::column(t.iter().map(|&v| f64::from(v)).collect())
}
