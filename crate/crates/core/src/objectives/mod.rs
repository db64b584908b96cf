//! Loss terms: the negative ELBO, auxiliary treatment/outcome losses, the
//! HSIC independence penalty, the Wasserstein balance penalty, and their
//! weighted total.

pub mod hsic;
pub mod likelihood;
pub mod sinkhorn;
mod total;

pub use hsic::{hsic_unbiased, hsic_value, indep_loss, Bandwidth};
pub use likelihood::{bernoulli_nll_logits, gaussian_nll, kl_diag_gaussian};
pub use sinkhorn::{disc_loss, sinkhorn_value, sinkhorn_w1, SinkhornConfig};
pub use total::{
    breakdown, model_objective, total_loss, Batch, LossBreakdown, LossWeights, Objective, ObjectiveTerms,
    RegularizerOptions,
};
