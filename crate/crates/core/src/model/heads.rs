//! Decoder networks and the auxiliary treatment/outcome heads.
//!
//! The treatment heads see only `(z_t, z_c)` and the outcome heads only
//! `(z_c, z_y)`; effect estimates therefore cannot depend on the instrument
//! or noise channels.

use crate::diffcore::tape::{Graph, Var};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::encoder::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::model::{Bound, Channel, Latents};

/// Parameter group a head belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadGroup {
    /// Generative decoders.
    Decoder,
    /// Auxiliary predictors used only as training signals.
    Auxiliary,
}

impl HeadGroup {
    fn prefix(self) -> &'static str {
        match self {
            HeadGroup::Decoder => "dec",
            HeadGroup::Auxiliary => "aux",
        }
    }
}

fn dense(g: &mut Graph, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let w = b.get(&format!("{prefix}.w"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add(xw, bias)
}

fn mlp(g: &mut Graph, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let h = dense(g, b, x, &format!("{prefix}.hidden"))?;
    let h = g.relu(h)?;
    dense(g, b, h, &format!("{prefix}.out"))
}

/// Gaussian feature decoder over all four channels: `(mean, log_var)`, both
/// `n x k`.
pub fn decode_x(g: &mut Graph, b: &Bound, z: &Latents) -> Result<(Var, Var)> {
    let input = g.concat_cols(&z.0)?;
    let h = dense(g, b, input, "dec.x.hidden")?;
    let h = g.relu(h)?;
    let mean = dense(g, b, h, "dec.x.mean")?;
    let lv = dense(g, b, h, "dec.x.logvar")?;
    Ok((mean, g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?))
}

fn treatment_logits(g: &mut Graph, b: &Bound, group: HeadGroup, zt: Var, zc: Var) -> Result<Var> {
    let input = g.concat_cols(&[zt, zc])?;
    mlp(g, b, input, &format!("{}.t", group.prefix()))
}

/// Treatment logits `[n, 1]` from `(z_t, z_c)`.
pub fn decode_t(g: &mut Graph, b: &Bound, zt: Var, zc: Var) -> Result<Var> {
    treatment_logits(g, b, HeadGroup::Decoder, zt, zc)
}

/// Auxiliary treatment logits with their own parameters.
pub fn aux_t(g: &mut Graph, b: &Bound, zt: Var, zc: Var) -> Result<Var> {
    treatment_logits(g, b, HeadGroup::Auxiliary, zt, zc)
}

/// Mean of one arm's outcome head, `[n, 1]`.
pub fn outcome_mean(g: &mut Graph, b: &Bound, group: HeadGroup, arm: u8, zc: Var, zy: Var) -> Result<Var> {
    let input = g.concat_cols(&[zc, zy])?;
    let head = if arm == 1 { "mean1" } else { "mean0" };
    mlp(g, b, input, &format!("{}.y.{head}", group.prefix()))
}

fn outcome(g: &mut Graph, b: &Bound, group: HeadGroup, t: &[u8], zc: Var, zy: Var) -> Result<(Var, Var)> {
    let n = g.shape(zc).0;
    if t.len() != n {
        return Err(Error::shape("decode_y", format!("{} treatments for {n} rows", t.len())));
    }
    let input = g.concat_cols(&[zc, zy])?;
    let p = group.prefix();
    let mut heads = [input; 4];
    for (slot, name) in heads.iter_mut().zip(crate::model::network::OUTCOME_HEADS) {
        *slot = mlp(g, b, input, &format!("{p}.y.{name}"))?;
    }
    let treated = g.constant(Tensor::column(t.iter().map(|&v| f64::from(v)).collect()));
    let control = g.constant(Tensor::column(t.iter().map(|&v| 1.0 - f64::from(v)).collect()));
    let mut select = |a: Var, c: Var| -> Result<Var> {
        let a = g.mul(treated, a)?;
        let c = g.mul(control, c)?;
        g.add(a, c)
    };
    let mean = select(heads[0], heads[1])?;
    let lv = select(heads[2], heads[3])?;
    Ok((mean, g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?))
}

/// Two-headed outcome decoder: each node uses the treated or control head
/// according to its own treatment. Returns `(mean, log_var)`, each `[n, 1]`.
pub fn decode_y(g: &mut Graph, b: &Bound, t: &[u8], zc: Var, zy: Var) -> Result<(Var, Var)> {
    outcome(g, b, HeadGroup::Decoder, t, zc, zy)
}

/// Auxiliary outcome predictor with the same structure as [`decode_y`].
pub fn aux_y(g: &mut Graph, b: &Bound, t: &[u8], zc: Var, zy: Var) -> Result<(Var, Var)> {
    outcome(g, b, HeadGroup::Auxiliary, t, zc, zy)
}

/// Convenience: decoder outcome for sampled latents.
pub fn decode_y_from(g: &mut Graph, b: &Bound, t: &[u8], z: &Latents) -> Result<(Var, Var)> {
    decode_y(g, b, t, z.get(Channel::C), z.get(Channel::Y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatentLayout, Model, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Model, Tensor, Tensor) {
        let cfg = ModelConfig { layout: LatentLayout::uniform(2), hidden_dim: 4, head_hidden_dim: 6, gcn_layers: 1, seed };
        let m = Model::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut r = || Tensor::matrix(5, 2, (0..10).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let (a, b) = (r(), r());
        (m, a, b)
    }

    #[test]
    fn treatment_selector_picks_heads() {
        let (m, zc, zy) = setup(1);
        let mut g = Graph::new();
        let b = m.bind(&mut g, false).unwrap();
        let (c, y) = (g.constant(zc), g.constant(zy));
        let (mean1, _) = decode_y(&mut g, &b, &[1; 5], c, y).unwrap();
        let f4 = outcome_mean(&mut g, &b, HeadGroup::Decoder, 1, c, y).unwrap();
        assert_eq!(g.value(mean1), g.value(f4));
        let (mean0, _) = decode_y(&mut g, &b, &[0; 5], c, y).unwrap();
        let f5 = outcome_mean(&mut g, &b, HeadGroup::Decoder, 0, c, y).unwrap();
        assert_eq!(g.value(mean0), g.value(f5));

        let (mixed, _) = decode_y(&mut g, &b, &[0, 0, 1, 0, 0], c, y).unwrap();
        for i in 0..5 {
            let expect = if i == 2 { g.value(f4).data()[i] } else { g.value(f5).data()[i] };
            assert_eq!(g.value(mixed).data()[i], expect);
        }
    }

    #[test]
    fn auxiliary_heads_are_independent() {
        let (mut m, zc, zy) = setup(2);
        m.params.value_mut("aux.y.mean1.out.b").unwrap().data_mut()[0] = 7.0;
        let mut g = Graph::new();
        let b = m.bind(&mut g, false).unwrap();
        let (c, y) = (g.constant(zc), g.constant(zy));
        let (dec, _) = decode_y(&mut g, &b, &[1; 5], c, y).unwrap();
        let (aux, _) = aux_y(&mut g, &b, &[1; 5], c, y).unwrap();
        assert_ne!(g.value(dec), g.value(aux));
    }

    #[test]
    fn zero_weights_give_half_probability_and_unit_variance() {
        let (mut m, zc, zy) = setup(3);
        let names: Vec<String> = m.params.names().map(str::to_string).collect();
        for n in names {
            m.params.value_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let b = m.bind(&mut g, false).unwrap();
        let (c, y) = (g.constant(zc.clone()), g.constant(zy));
        let logits = decode_t(&mut g, &b, c, c).unwrap();
        assert_eq!(g.shape(logits), (5, 1));
        let p = g.sigmoid(logits).unwrap();
        assert!(g.value(p).data().iter().all(|&v| v == 0.5));
        let latents = Latents([c, c, y, y]);
        let (mean, lv) = decode_x(&mut g, &b, &latents).unwrap();
        assert_eq!(g.shape(mean), (5, 3));
        assert!(g.value(mean).data().iter().chain(g.value(lv).data()).all(|&v| v == 0.0));
    }

    #[test]
    fn extreme_latents_stay_finite() {
        let (m, _, _) = setup(4);
        let mut g = Graph::new();
        let b = m.bind(&mut g, false).unwrap();
        let big = g.constant(Tensor::full(5, 2, 100.0));
        let small = g.constant(Tensor::full(5, 2, -100.0));
        let (_, lv) = decode_x(&mut g, &b, &Latents([big, small, big, small])).unwrap();
        assert!(g.value(lv).data().iter().all(|v| (LOG_VAR_MIN..=LOG_VAR_MAX).contains(v)));
        let (_, lv) = decode_y(&mut g, &b, &[1, 0, 1, 0, 1], big, small).unwrap();
        assert!(g.value(lv).data().iter().all(|v| (LOG_VAR_MIN..=LOG_VAR_MAX).contains(v)));
    }
}
