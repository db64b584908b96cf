//! Fully synthetic networked data with known latent structure.
//!
//! Each node draws four standard-normal latent blocks `z_t, z_c, z_y, z_o`;
//! the features are their concatenation. Edges, treatment and both
//! potential outcomes are generated from the latents, so the ground-truth
//! effect is known exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diffcore::tape::sigmoid;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, SplitIndex, Truth};
use crate::seeding::derive_seed;

pub const GENERATOR: &str = "tndvgasynth";
pub const GENERATOR_VERSION: u32 = 1;
const MAX_TREATMENT_ATTEMPTS: u64 = 100;
/// Scenario dimensions are drawn from this set for every block.
pub const SCENARIO_DIMS: [usize; 2] = [4, 8];
pub const SEEDS_PER_SCENARIO: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n: usize,
    pub m_t: usize,
    pub m_c: usize,
    pub m_y: usize,
    pub m_o: usize,
    /// Slope of the treatment-assignment logistic; larger means stronger
    /// selection bias.
    pub zeta: f64,
    pub seed: u64,
    /// Train/validation/test proportions used for `splits.json`.
    pub split_fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    [5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0]
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { n: 7000, m_t: 8, m_c: 8, m_y: 8, m_o: 8, zeta: 1.0, seed: 0, split_fractions: default_fractions() }
    }
}

impl GenConfig {
    pub fn with_dims(mut self, dims: [usize; 4]) -> Self {
        [self.m_t, self.m_c, self.m_y, self.m_o] = dims;
        self
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.m_t, self.m_c, self.m_y, self.m_o]
    }

    pub fn feature_dim(&self) -> usize {
        self.dims().iter().sum()
    }

    /// `"8-8-8-8"` style label.
    pub fn dims_label(&self) -> String {
        self.dims().iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidArgument(format!("n must be at least 10, got {}", self.n)));
        }
        if self.m_c + self.m_y == 0 {
            return Err(Error::InvalidArgument("m_c + m_y must be positive (outcomes depend on them)".into()));
        }
        if !(self.zeta >= 0.0) || !self.zeta.is_finite() {
            return Err(Error::InvalidArgument(format!("zeta must be finite and >= 0, got {}", self.zeta)));
        }
        Ok(())
    }
}

/// `0.01 · sigmoid(h_i · h_j + 1)`
pub fn edge_probability(h_i: &[f64], h_j: &[f64]) -> f64 {
    let dot: f64 = h_i.iter().zip(h_j).map(|(a, b)| a * b).sum();
    0.01 * sigmoid(dot + 1.0)
}

pub fn sample_edge<R: Rng + ?Sized>(rng: &mut R, h_i: &[f64], h_j: &[f64]) -> bool {
    rng.random::<f64>() < edge_probability(h_i, h_j)
}

/// `sigmoid(ζ · (Ψ · θ + 1))` for one node's `Ψ = [z_t, z_c]`.
pub fn treatment_probability(zeta: f64, psi: &[f64], theta: &[f64]) -> f64 {
    let score: f64 = psi.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + 1.0;
    sigmoid(zeta * score)
}

/// Noiseless potential-outcome means for one node's `Φ = [z_c, z_y]`.
pub fn potential_outcomes(phi: &[f64], nu0: &[f64], nu1: &[f64]) -> (f64, f64) {
    let scale = phi.len() as f64;
    let mu0 = phi.iter().zip(nu0).map(|(p, v)| (p * p * p + 0.5) * v).sum::<f64>() / scale;
    let mu1 = phi.iter().zip(nu1).map(|(p, v)| p * p * v).sum::<f64>() / scale;
    (mu0, mu1)
}

fn normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

/// Latent draws and once-per-dataset coefficient vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    /// `n x (m_t + m_c + m_y + m_o)`, blocks in `t, c, y, o` order.
    pub h: Tensor,
    pub theta: Vec<f64>,
    pub nu0: Vec<f64>,
    pub nu1: Vec<f64>,
}

impl Latents {
    fn psi<'a>(&'a self, cfg: &GenConfig, i: usize) -> &'a [f64] {
        &self.h.row_slice(i)[..cfg.m_t + cfg.m_c]
    }

    fn phi<'a>(&'a self, cfg: &GenConfig, i: usize) -> &'a [f64] {
        &self.h.row_slice(i)[cfg.m_t..cfg.m_t + cfg.m_c + cfg.m_y]
    }

    /// Per-node probability of treatment under `config.zeta`.
    pub fn treatment_probabilities(&self, config: &GenConfig) -> Vec<f64> {
        (0..self.h.rows()).map(|i| treatment_probability(config.zeta, self.psi(config, i), &self.theta)).collect()
    }
}

/// Draws the latent blocks and coefficients. Independent of `zeta`.
pub fn draw_latents(config: &GenConfig) -> Latents {
    let k = config.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1]));
    let h = Tensor::matrix(config.n, k, normals(&mut rng, config.n * k)).expect("shape");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[2]));
    let nu0 = normals(&mut rng, config.m_c + config.m_y);
    let nu1 = normals(&mut rng, config.m_c + config.m_y);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3, 0]));
    let theta = normals(&mut rng, config.m_t + config.m_c);
    Latents { h, theta, nu0, nu1 }
}

pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n;
    let mut latents = draw_latents(config);

    let mut edge_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[4]));
    let mut edges = Vec::new();
    for i in 0..n {
        let hi = latents.h.row_slice(i);
        for j in i + 1..n {
            if sample_edge(&mut edge_rng, hi, latents.h.row_slice(j)) {
                edges.push((i, j));
            }
        }
    }
    let adjacency = Dataset::adjacency_from_edges(n, &edges)?;

    let mut treatment = Vec::new();
    for attempt in 0..MAX_TREATMENT_ATTEMPTS {
        if attempt > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3, attempt]));
            latents.theta = normals(&mut rng, config.m_t + config.m_c);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[5, attempt]));
        treatment = latents
            .treatment_probabilities(config)
            .into_iter()
            .map(|p| u8::from(rng.random::<f64>() < p))
            .collect();
        let treated = treatment.iter().filter(|&&t| t == 1).count();
        if treated > 0 && treated < n {
            break;
        }
        if attempt + 1 == MAX_TREATMENT_ATTEMPTS {
            return Err(Error::Overlap(format!(
                "all nodes fell in one treatment arm after {MAX_TREATMENT_ATTEMPTS} coefficient draws"
            )));
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[6]));
    let (mut mu0, mut mu1, mut outcome) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (m0, m1) = potential_outcomes(latents.phi(config, i), &latents.nu0, &latents.nu1);
        let eps: f64 = noise_rng.sample(StandardNormal);
        outcome.push(if treatment[i] == 1 { m1 } else { m0 } + eps);
        mu0.push(m0);
        mu1.push(m1);
    }

    let splits = SplitIndex::random(&treatment, config.split_fractions, derive_seed(config.seed, &[7]))?;
    let meta = json!({
        "generator": GENERATOR,
        "generator_version": GENERATOR_VERSION,
        "n": n,
        "k": config.feature_dim(),
        "m_t": config.m_t,
        "m_c": config.m_c,
        "m_y": config.m_y,
        "m_o": config.m_o,
        "zeta": config.zeta,
        "seed": config.seed,
        "split_fractions": config.split_fractions,
        "theta": latents.theta,
        "nu0": latents.nu0,
        "nu1": latents.nu1,
        "edges": edges.len(),
    });
    let ds = Dataset {
        features: latents.h,
        adjacency,
        treatment,
        outcome,
        truth: Some(Truth { mu0, mu1 }),
        splits: Some(splits),
        meta,
    };
    ds.validate()?;
    Ok(ds)
}

/// The 16 block-dimension combinations over `{4, 8}^4`.
pub fn scenario_dims() -> Vec<[usize; 4]> {
    let d = SCENARIO_DIMS;
    let mut out = Vec::with_capacity(16);
    for &t in &d {
        for &c in &d {
            for &y in &d {
                for &o in &d {
                    out.push([t, c, y, o]);
                }
            }
        }
    }
    out
}

/// Every scenario crossed with five seeds derived from `base_seed`.
pub fn scenario_grid(base_seed: u64, template: &GenConfig) -> Vec<GenConfig> {
    scenario_dims()
        .into_iter()
        .flat_map(|dims| {
            (0..SEEDS_PER_SCENARIO).map(move |r| (dims, r))
        })
        .map(|(dims, r)| GenConfig {
            seed: derive_seed(base_seed, &[0x5ce0, r as u64]),
            ..template.clone().with_dims(dims)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(seed: u64) -> GenConfig {
        GenConfig { n: 200, m_t: 4, m_c: 4, m_y: 4, m_o: 4, zeta: 1.0, seed, split_fractions: [0.6, 0.2, 0.2] }
    }

    #[test]
    fn feature_dim_is_block_sum() {
        let ds = generate(&small(1)).unwrap();
        assert_eq!(ds.k(), 16);
        assert_eq!(ds.n(), 200);
    }

    #[test]
    fn zero_zeta_gives_coin_flip_assignment() {
        let cfg = GenConfig { zeta: 0.0, ..small(2) };
        let lat = draw_latents(&cfg);
        assert!(lat.treatment_probabilities(&cfg).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn same_config_is_bit_identical() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap().features, generate(&small(4)).unwrap().features);
    }

    #[test]
    fn effects_do_not_depend_on_assignment() {
        let a = generate(&GenConfig { zeta: 0.5, ..small(5) }).unwrap();
        let b = generate(&GenConfig { zeta: 3.0, ..small(5) }).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.treatment, b.treatment);
    }

    #[test]
    fn both_arms_present() {
        let ds = generate(&GenConfig { zeta: 3.0, ..small(6) }).unwrap();
        let treated = ds.treatment.iter().filter(|&&t| t == 1).count();
        assert!(treated > 0 && treated < ds.n());
        assert!(ds.splits.as_ref().unwrap().has_overlap(&ds.treatment));
    }

    #[test]
    fn observed_outcome_is_factual_mean_plus_noise() {
        let ds = generate(&small(7)).unwrap();
        let truth = ds.truth.as_ref().unwrap();
        let resid: Vec<f64> = (0..ds.n())
            .map(|i| ds.outcome[i] - if ds.treatment[i] == 1 { truth.mu1[i] } else { truth.mu0[i] })
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / resid.len() as f64;
        assert!(mean.abs() < 0.25, "{mean}");
        assert!((var - 1.0).abs() < 0.3, "{var}");
    }

    #[test]
    fn outcome_means_follow_closed_form() {
        let phi = [1.0, -2.0];
        let (m0, m1) = potential_outcomes(&phi, &[1.0, 0.5], &[2.0, -1.0]);
        assert!((m0 - ((1.0 + 0.5) * 1.0 + (-8.0 + 0.5) * 0.5) / 2.0).abs() < 1e-15);
        assert!((m1 - (1.0 * 2.0 + 4.0 * -1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_has_sixteen_scenarios_and_eighty_datasets() {
        let dims = scenario_dims();
        assert_eq!(dims.len(), 16);
        assert_eq!(dims.iter().collect::<HashSet<_>>().len(), 16);
        let grid = scenario_grid(11, &GenConfig::default());
        assert_eq!(grid.len(), 80);
        let pairs: HashSet<_> = grid.iter().map(|c| (c.dims(), c.seed)).collect();
        assert_eq!(pairs.len(), 80);
        assert_eq!(grid, scenario_grid(11, &GenConfig::default()));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&GenConfig { n: 9, ..small(1) }).is_err());
        assert!(generate(&GenConfig { m_c: 0, m_y: 0, ..small(1) }).is_err());
        assert!(generate(&GenConfig { zeta: -1.0, ..small(1) }).is_err());
    }

    #[test]
    fn meta_records_coefficients() {
        let ds = generate(&small(8)).unwrap();
        assert_eq!(ds.meta["theta"].as_array().unwrap().len(), 8);
        assert_eq!(ds.meta["nu0"].as_array().unwrap().len(), 8);
        assert_eq!(ds.meta["zeta"], 1.0);
    }
}
