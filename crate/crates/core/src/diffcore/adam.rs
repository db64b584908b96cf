use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient of an L2 penalty `λ‖θ‖²`, applied as `2λθ` added to the
    /// gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("shape");
        let first_moment = store.iter().map(|(n, p)| (n.to_string(), zeros(&p.value))).collect();
        let second_moment = store.iter().map(|(n, p)| (n.to_string(), zeros(&p.value))).collect();
        AdamState { config, step: 0, first_moment, second_moment }
    }
}

/// One Adam update over every parameter in `store`; gradients are zeroed
/// afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    let AdamConfig { learning_rate, beta1, beta2, epsilon, weight_decay } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (name, p) in store.iter_mut() {
        let (Some(m), Some(v)) = (state.first_moment.get_mut(name), state.second_moment.get_mut(name)) else {
            return Err(Error::InvalidArgument(format!("optimizer state has no moments for '{name}'")));
        };
        if m.len() != p.value.len() || v.len() != p.value.len() {
            return Err(Error::shape("adam_step", format!("moment shape mismatch for '{name}'")));
        }
        let vals = p.value.data_mut();
        let grads = p.grad.data_mut();
        for (i, th) in vals.iter_mut().enumerate() {
            let g = grads[i] + 2.0 * weight_decay * *th;
            let mi = &mut m.data_mut()[i];
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            let vi = &mut v.data_mut()[i];
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = m.data()[i] / bias1;
            let v_hat = v.data()[i] / bias2;
            *th -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            grads[i] = 0.0;
        }
    }
    Ok(())
}
