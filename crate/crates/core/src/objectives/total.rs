use serde::{Deserialize, Serialize};

use crate::diffcore::tape::{Graph, Var};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{self, Bound, Channel, GraphInput};
use crate::objectives::hsic::{indep_loss, Bandwidth};
use crate::objectives::likelihood::{bernoulli_nll_logits, gaussian_nll, kl_diag_gaussian, treatment_column};
use crate::objectives::sinkhorn::{disc_loss, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_t: f64,
    pub alpha_y: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub lambda_l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha_t: 100.0, alpha_y: 100.0, alpha_1: 1.0, alpha_2: 1.0, lambda_l2: 5e-5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_t, self.alpha_y, self.alpha_1, self.alpha_2, self.lambda_l2];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Scalar values of every objective term for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Negative ELBO: reconstruction NLLs of `x`, `t`, `y` plus the four KLs.
    pub elbo: f64,
    pub treat: f64,
    pub pred: f64,
    pub indep: f64,
    pub disc: f64,
    /// `λ ‖Θ‖²`; applied by the optimizer, reported here.
    pub l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.elbo + w.alpha_t * self.treat + w.alpha_y * self.pred + w.alpha_1 * self.indep + w.alpha_2 * self.disc
            + self.l2
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("elbo", self.elbo),
            ("treat", self.treat),
            ("pred", self.pred),
            ("indep", self.indep),
            ("disc", self.disc),
            ("l2", self.l2),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Tape handles of the objective terms.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    pub elbo: Var,
    pub treat: Var,
    pub pred: Var,
    pub indep: Var,
    pub disc: Var,
}

/// `elbo + α_t·treat + α_y·pred + α₁·indep + α₂·disc`. The L2 term is left
/// to the optimizer's weight decay.
pub fn total_loss(g: &mut Graph, terms: &ObjectiveTerms, w: &LossWeights) -> Result<Var> {
    let mut total = terms.elbo;
    for (v, alpha) in [(terms.treat, w.alpha_t), (terms.pred, w.alpha_y), (terms.indep, w.alpha_1), (terms.disc, w.alpha_2)]
    {
        if alpha != 0.0 {
            let s = g.scale(v, alpha)?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

pub fn breakdown(g: &Graph, terms: &ObjectiveTerms, w: &LossWeights, l2: f64) -> LossBreakdown {
    let v = |x: Var| g.value(x).item();
    let mut b = LossBreakdown {
        elbo: v(terms.elbo),
        treat: v(terms.treat),
        pred: v(terms.pred),
        indep: v(terms.indep),
        disc: v(terms.disc),
        l2,
        total: 0.0,
    };
    b.total = b.weighted_total(w);
    b
}

/// Options for the two set-level regularizers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularizerOptions {
    pub bandwidth: Bandwidth,
    pub sinkhorn: SinkhornConfig,
}

/// Supervised nodes for one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub input: &'a GraphInput,
    /// Treatment of every node in the graph.
    pub treatment: &'a [u8],
    /// Observed outcome of every node in the graph.
    pub outcome: &'a [f64],
    /// Node ids whose likelihood terms are averaged.
    pub rows: &'a [usize],
    /// Positions within `rows` used for HSIC and the balance penalty;
    /// `None` uses all of `rows`.
    pub reg_rows: Option<&'a [usize]>,
}

/// Objective value with its terms and the tape handle to differentiate.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub loss: Var,
    pub terms: ObjectiveTerms,
}

/// Builds the full training objective on `g`.
///
/// Encoders run on the whole graph; every other term is restricted to
/// `batch.rows`. `noise[c]` is the standard-normal matrix used to sample
/// channel `c` and must have `rows.len()` rows. Regularizers whose weight is
/// zero are not evaluated and report 0.
pub fn model_objective(
    g: &mut Graph,
    b: &Bound,
    batch: &Batch<'_>,
    noise: &[Tensor; 4],
    w: &LossWeights,
    reg: &RegularizerOptions,
) -> Result<Objective> {
    let rows = batch.rows;
    let post = model::encode_input(g, b, batch.input, &Channel::ALL)?.select_rows(g, rows)?;
    let z = model::sample_all(g, &post, noise)?;

    let mut elbo = g.constant(Tensor::scalar(0.0));
    for ch in Channel::ALL {
        let kl = kl_diag_gaussian(g, post.get(ch))?;
        elbo = g.add(elbo, kl)?;
    }
    let x = g.constant(batch.input.features.select_rows(rows));
    let (xm, xlv) = model::decode_x(g, b, &z)?;
    let nll_x = gaussian_nll(g, x, xm, xlv)?;

    let t: Vec<u8> = rows.iter().map(|&i| batch.treatment[i]).collect();
    let t_col = g.constant(treatment_column(&t));
    let y = g.constant(Tensor::column(rows.iter().map(|&i| batch.outcome[i]).collect()));
    let (zt, zc, zy) = (z.get(Channel::T), z.get(Channel::C), z.get(Channel::Y));

    let logits = model::decode_t(g, b, zt, zc)?;
    let nll_t = bernoulli_nll_logits(g, t_col, logits)?;
    let (ym, ylv) = model::decode_y(g, b, &t, zc, zy)?;
    let nll_y = gaussian_nll(g, y, ym, ylv)?;
    for term in [nll_x, nll_t, nll_y] {
        elbo = g.add(elbo, term)?;
    }

    let aux_logits = model::aux_t(g, b, zt, zc)?;
    let treat = bernoulli_nll_logits(g, t_col, aux_logits)?;
    let (am, alv) = model::aux_y(g, b, &t, zc, zy)?;
    let pred = gaussian_nll(g, y, am, alv)?;

    let (reg_z, reg_t): (Vec<Var>, Vec<u8>) = match batch.reg_rows {
        Some(pos) => {
            let mut zs = Vec::with_capacity(4);
            for ch in Channel::ALL {
                zs.push(g.select_rows(z.get(ch), pos)?);
            }
            (zs, pos.iter().map(|&p| t[p]).collect())
        }
        None => (z.0.to_vec(), t.clone()),
    };
    let indep = if w.alpha_1 != 0.0 {
        indep_loss(g, &reg_z, reg.bandwidth)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };
    let disc = if w.alpha_2 != 0.0 {
        disc_loss(g, reg_z[Channel::Y.index()], &reg_t, &reg.sinkhorn)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };

    let terms = ObjectiveTerms { elbo, treat, pred, indep, disc };
    let loss = total_loss(g, &terms, w)?;
    Ok(Objective { loss, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(g: &mut Graph, vals: [f64; 5]) -> ObjectiveTerms {
        let [elbo, treat, pred, indep, disc] = vals.map(|x| g.constant(Tensor::scalar(x)));
        ObjectiveTerms { elbo, treat, pred, indep, disc }
    }

    #[test]
    fn zero_weights_leave_elbo() {
        let mut g = Graph::new();
        let t = terms(&mut g, [1.5, 2.0, 3.0, 4.0, 5.0]);
        let w = LossWeights { alpha_t: 0.0, alpha_y: 0.0, alpha_1: 0.0, alpha_2: 0.0, lambda_l2: 0.0 };
        let total = total_loss(&mut g, &t, &w).unwrap();
        assert_eq!(g.value(total).item(), 1.5);
        assert_eq!(breakdown(&g, &t, &w, 0.0).total, 1.5);
    }

    #[test]
    fn doubling_alpha_t_doubles_treat_contribution() {
        let mut g = Graph::new();
        let t = terms(&mut g, [1.0, 2.0, 0.0, 0.0, 0.0]);
        let w1 = LossWeights { alpha_t: 3.0, ..LossWeights::default() };
        let w2 = LossWeights { alpha_t: 6.0, ..LossWeights::default() };
        let a = breakdown(&g, &t, &w1, 0.0).total - 1.0;
        let b = breakdown(&g, &t, &w2, 0.0).total - 1.0;
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn non_finite_term_is_named() {
        let b = LossBreakdown { disc: f64::NAN, ..LossBreakdown::default() };
        assert_eq!(b.non_finite_term(), Some("disc"));
        assert_eq!(LossBreakdown::default().non_finite_term(), None);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossWeights { alpha_1: -1.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
