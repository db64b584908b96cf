//! Unbiased HSIC with Gaussian RBF kernels.
//!
//! For Gram matrices `K`, `L` with zeroed diagonals the estimator is
//!
//! ```text
//! [ tr(K Lᵀ) + (1ᵀK1)(1ᵀLᵀ1) / ((n-1)(n-2)) - 2/(n-2) · 1ᵀ K Lᵀ 1 ] / (n(n-3))
//! ```
//!
//! The kernel is `exp(-‖a - b‖² / (2σ²))`; `σ` defaults to the median
//! pairwise distance and is held constant under differentiation.

use crate::diffcore::tape::{sq_dist_matrix, Graph, Var};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const MIN_BANDWIDTH: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise Euclidean distance of each input.
    #[default]
    Median,
    /// The same fixed `σ` for every input.
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(self, x: &Tensor) -> f64 {
        match self {
            Bandwidth::Median => median_distance(x),
            Bandwidth::Fixed(s) => s.max(MIN_BANDWIDTH),
        }
    }
}

/// Median of `‖x_i - x_j‖` over `i < j`, floored at [`MIN_BANDWIDTH`].
pub fn median_distance(x: &Tensor) -> f64 {
    let n = x.rows();
    let d2 = sq_dist_matrix(x, x);
    let mut dists: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push(d2.get(i, j).sqrt());
        }
    }
    if dists.is_empty() {
        return MIN_BANDWIDTH;
    }
    let mid = dists.len() / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if dists.len() % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    median.max(MIN_BANDWIDTH)
}

/// RBF Gram matrix with its diagonal set to zero.
pub fn rbf_gram(x: &Tensor, sigma: f64) -> Tensor {
    let mut k = sq_dist_matrix(x, x).map(|d| (-d / (2.0 * sigma * sigma)).exp());
    for i in 0..x.rows() {
        k.set(i, i, 0.0);
    }
    k
}

fn check_n(n: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("unbiased HSIC needs at least 4 samples, got {n}")));
    }
    Ok(())
}

/// Estimator on precomputed zero-diagonal Gram matrices, with `L` indexed
/// through `perm` (`L'_ij = L_{perm_i, perm_j}`).
pub fn hsic_from_grams_permuted(k: &Tensor, l: &Tensor, perm: Option<&[usize]>) -> Result<f64> {
    let n = k.rows();
    check_n(n)?;
    if k.shape() != [n, n] || l.shape() != [n, n] {
        return Err(Error::shape("hsic", format!("gram shapes {:?} and {:?}", k.shape(), l.shape())));
    }
    let idx = |i: usize| perm.map_or(i, |p| p[i]);
    let mut trace = 0.0;
    let mut k_sum = 0.0;
    let mut l_sum = 0.0;
    let mut k_col = vec![0.0; n];
    let mut l_col = vec![0.0; n];
    for i in 0..n {
        let kr = k.row_slice(i);
        let lr = l.row_slice(idx(i));
        for j in 0..n {
            let lv = lr[idx(j)];
            trace += kr[j] * lv;
            k_col[j] += kr[j];
            l_col[j] += lv;
        }
    }
    for j in 0..n {
        k_sum += k_col[j];
        l_sum += l_col[j];
    }
    let cross: f64 = k_col.iter().zip(&l_col).map(|(a, b)| a * b).sum();
    let nf = n as f64;
    Ok((trace + k_sum * l_sum / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * cross) / (nf * (nf - 3.0)))
}

pub fn hsic_from_grams(k: &Tensor, l: &Tensor) -> Result<f64> {
    hsic_from_grams_permuted(k, l, None)
}

/// Plain-value estimate for two sample matrices with matched rows.
pub fn hsic_value(u: &Tensor, v: &Tensor, bandwidth: Bandwidth) -> Result<f64> {
    if u.rows() != v.rows() {
        return Err(Error::shape("hsic", format!("{} vs {} samples", u.rows(), v.rows())));
    }
    check_n(u.rows())?;
    hsic_from_grams(&rbf_gram(u, bandwidth.resolve(u)), &rbf_gram(v, bandwidth.resolve(v)))
}

fn off_diagonal_mask(g: &mut Graph, n: usize) -> Var {
    let mut mask = Tensor::full(n, n, 1.0);
    for i in 0..n {
        mask.set(i, i, 0.0);
    }
    g.constant(mask)
}

/// Zero-diagonal RBF Gram matrix on the tape; `σ` is resolved from the
/// current values and does not receive a gradient.
fn gram_var(g: &mut Graph, x: Var, bandwidth: Bandwidth, off_diag: Var) -> Result<Var> {
    let sigma = bandwidth.resolve(g.value(x));
    let d = g.pairwise_sq_dist(x, x)?;
    let s = g.scale(d, -1.0 / (2.0 * sigma * sigma))?;
    let k = g.exp(s)?;
    g.mul(k, off_diag)
}

fn hsic_from_gram_vars(g: &mut Graph, k: Var, l: Var) -> Result<Var> {
    let n = g.shape(k).0;
    let kl = g.mul(k, l)?;
    let trace = g.sum(kl)?;
    let k_col = g.sum_cols(k)?;
    let l_col = g.sum_cols(l)?;
    let k_sum = g.sum(k_col)?;
    let l_sum = g.sum(l_col)?;
    let kl_cols = g.mul(k_col, l_col)?;
    let cross = g.sum(kl_cols)?;

    let nf = n as f64;
    let sums = g.mul(k_sum, l_sum)?;
    let sums = g.scale(sums, 1.0 / ((nf - 1.0) * (nf - 2.0)))?;
    let cross = g.scale(cross, -2.0 / (nf - 2.0))?;
    let total = g.add(trace, sums)?;
    let total = g.add(total, cross)?;
    g.scale(total, 1.0 / (nf * (nf - 3.0)))
}

/// Differentiable unbiased HSIC between `u: [n, d_u]` and `v: [n, d_v]`.
pub fn hsic_unbiased(g: &mut Graph, u: Var, v: Var, bandwidth: Bandwidth) -> Result<Var> {
    let (n, _) = g.shape(u);
    if g.shape(v).0 != n {
        return Err(Error::shape("hsic", format!("{} vs {} samples", n, g.shape(v).0)));
    }
    check_n(n)?;
    let mask = off_diagonal_mask(g, n);
    let k = gram_var(g, u, bandwidth, mask)?;
    let l = gram_var(g, v, bandwidth, mask)?;
    hsic_from_gram_vars(g, k, l)
}

/// Sum of pairwise HSIC over the given latent matrices, skipping any with
/// zero columns. Returns a constant 0 when fewer than two are non-empty.
pub fn indep_loss(g: &mut Graph, latents: &[Var], bandwidth: Bandwidth) -> Result<Var> {
    let active: Vec<Var> = latents.iter().copied().filter(|&z| g.shape(z).1 > 0).collect();
    if active.len() < 2 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let n = g.shape(active[0]).0;
    if active.iter().any(|&z| g.shape(z).0 != n) {
        return Err(Error::shape("indep_loss", "latent matrices differ in row count"));
    }
    check_n(n)?;
    let mask = off_diagonal_mask(g, n);
    let mut grams = Vec::with_capacity(active.len());
    for &z in &active {
        grams.push(gram_var(g, z, bandwidth, mask)?);
    }
    let mut total: Option<Var> = None;
    for i in 0..grams.len() {
        for j in i + 1..grams.len() {
            let h = hsic_from_gram_vars(g, grams[i], grams[j])?;
            total = Some(match total {
                Some(t) => g.add(t, h)?,
                None => h,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}
