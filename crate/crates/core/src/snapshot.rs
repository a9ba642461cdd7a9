//! Bit-exact JSON encoding of parameter tensors.
//!
//! Each tensor is written as `{"shape": [...], "data": "<base64>"}` where the
//! payload is the row-major little-endian bytes of the `f64` values, so a
//! round trip reproduces every bit.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::module::Module;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl From<&Tensor> for EncodedTensor {
    fn from(t: &Tensor) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        EncodedTensor {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }
}

impl TryFrom<&EncodedTensor> for Tensor {
    type Error = Error;

    fn try_from(e: &EncodedTensor) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&e.data)
            .map_err(|err| Error::Snapshot(format!("bad base64 payload: {err}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Snapshot(format!(
                "payload of {} bytes is not a whole number of f64",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(e.shape.clone(), data)
    }
}

/// Generic snapshot for any [`Module`]: every parameter by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSnapshot {
    pub kind: String,
    pub tensors: BTreeMap<String, EncodedTensor>,
}

impl ModuleSnapshot {
    pub fn capture<M: Module>(kind: &str, module: &M) -> Self {
        let tensors = module
            .params()
            .into_iter()
            .map(|p| (p.name, EncodedTensor::from(p.value)))
            .collect();
        ModuleSnapshot {
            kind: kind.to_string(),
            tensors,
        }
    }

    /// Overwrites the module's parameters; names and shapes must match.
    pub fn restore<M: Module>(&self, module: &mut M) -> Result<()> {
        let names: Vec<String> = module.params().into_iter().map(|p| p.name).collect();
        let mut decoded = Vec::with_capacity(names.len());
        for name in &names {
            let enc = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Snapshot(format!("missing tensor {name}")))?;
            decoded.push(Tensor::try_from(enc)?);
        }
        for (slot, (value, name)) in module.params_mut().into_iter().zip(decoded.into_iter().zip(&names)) {
            if slot.shape() != value.shape() {
                return Err(Error::Snapshot(format!(
                    "tensor {name}: shape {:?} does not match model {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tensor_round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 1..40)) {
            let data: Vec<f64> = bits
                .into_iter()
                .map(f64::from_bits)
                .map(|v| if v.is_finite() { v } else { 0.5 })
                .collect();
            let t = Tensor::vector(data).unwrap();
            let json = serde_json::to_string(&EncodedTensor::from(&t)).unwrap();
            let back: EncodedTensor = serde_json::from_str(&json).unwrap();
            let u = Tensor::try_from(&back).unwrap();
            let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = u.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(t.shape(), u.shape());
        }
    }

    #[test]
    fn corrupt_payload_rejected() {
        let t = Rng::seed(1).uniform([3], 0.0, 1.0).unwrap();
        let mut enc = EncodedTensor::from(&t);
        enc.data.truncate(enc.data.len() - 4);
        assert!(Tensor::try_from(&enc).is_err());
    }
}
