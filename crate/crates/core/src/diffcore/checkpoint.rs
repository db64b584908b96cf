//! JSON checkpoints: every parameter as `{shape, data}` with `data` the
//! base64 encoding of its little-endian `f64` values, plus optimizer state
//! under `"optimizer"`.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedTensor {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        EncodedTensor { shape: t.shape().to_vec(), data: STANDARD.encode(bytes) }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format(format!("payload of {} bytes is not a whole number of f64", bytes.len())));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(self.shape.clone(), values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerCheckpoint {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: BTreeMap<String, EncodedTensor>,
    pub second_moment: BTreeMap<String, EncodedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: BTreeMap<String, EncodedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerCheckpoint>,
}

fn encode_map(m: &BTreeMap<String, Tensor>) -> BTreeMap<String, EncodedTensor> {
    m.iter().map(|(k, v)| (k.clone(), EncodedTensor::encode(v))).collect()
}

fn decode_map(m: &BTreeMap<String, EncodedTensor>) -> Result<BTreeMap<String, Tensor>> {
    m.iter().map(|(k, v)| Ok((k.clone(), v.decode()?))).collect()
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, optimizer: Option<&AdamState>) -> Self {
        let params = store.iter().map(|(n, p)| (n.to_string(), EncodedTensor::encode(&p.value))).collect();
        let optimizer = optimizer.map(|s| OptimizerCheckpoint {
            config: s.config,
            step: s.step,
            first_moment: encode_map(&s.first_moment),
            second_moment: encode_map(&s.second_moment),
        });
        Checkpoint { params, optimizer }
    }

    pub fn param_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, enc) in &self.params {
            store.insert(name.clone(), enc.decode()?)?;
        }
        Ok(store)
    }

    pub fn adam_state(&self) -> Result<Option<AdamState>> {
        self.optimizer
            .as_ref()
            .map(|o| {
                Ok(AdamState {
                    config: o.config,
                    step: o.step,
                    first_moment: decode_map(&o.first_moment)?,
                    second_moment: decode_map(&o.second_moment)?,
                })
            })
            .transpose()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::matrix(1, 3, vec![0.1, -0.0, f64::MIN_POSITIVE]).unwrap()).unwrap();
        store.insert("b", Tensor::matrix(2, 1, vec![1e300, -3.5]).unwrap()).unwrap();
        let state = AdamState::new(&store, AdamConfig::default());
        let ck = Checkpoint::capture(&store, Some(&state));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.param_store().unwrap(), store);
        assert_eq!(back.adam_state().unwrap().unwrap(), state);
        let neg_zero = back.param_store().unwrap().value("a").unwrap().data()[1];
        assert!(neg_zero.is_sign_negative());
    }

    #[test]
    fn rejects_truncated_payload() {
        let enc = EncodedTensor { shape: vec![1], data: STANDARD.encode([0u8; 7]) };
        assert!(enc.decode().is_err());
    }
}
