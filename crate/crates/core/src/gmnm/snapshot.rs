use serde::{Deserialize, Serialize};

use super::{GmnmConfig, GmnmParams};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::snapshot::EncodedTensor;

/// JSON layout `{config, mu, A, b, alpha_raw, beta_raw, Pi}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmnmSnapshot {
    pub config: GmnmConfig,
    pub mu: EncodedTensor,
    #[serde(rename = "A")]
    pub a: EncodedTensor,
    pub b: EncodedTensor,
    pub alpha_raw: EncodedTensor,
    pub beta_raw: EncodedTensor,
    #[serde(rename = "Pi")]
    pub pi: EncodedTensor,
}

impl From<&GmnmParams> for GmnmSnapshot {
    fn from(p: &GmnmParams) -> Self {
        GmnmSnapshot {
            config: p.config.clone(),
            mu: (&p.mu).into(),
            a: (&p.a).into(),
            b: (&p.b).into(),
            alpha_raw: (&p.alpha_raw).into(),
            beta_raw: (&p.beta_raw).into(),
            pi: (&p.pi).into(),
        }
    }
}

impl TryFrom<&GmnmSnapshot> for GmnmParams {
    type Error = Error;

    fn try_from(s: &GmnmSnapshot) -> Result<GmnmParams> {
        let c = &s.config;
        c.validate()?;
        let expect = |name: &str, t: Tensor, shape: Vec<usize>| -> Result<Tensor> {
            if t.shape() != shape.as_slice() {
                return Err(Error::Snapshot(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        Ok(GmnmParams {
            mu: expect("mu", (&s.mu).try_into()?, vec![c.m, c.d])?,
            a: expect("A", (&s.a).try_into()?, vec![c.m, c.n, c.d])?,
            b: expect("b", (&s.b).try_into()?, vec![c.m, c.n])?,
            alpha_raw: expect("alpha_raw", (&s.alpha_raw).try_into()?, vec![c.m, c.n])?,
            beta_raw: expect("beta_raw", (&s.beta_raw).try_into()?, vec![c.m])?,
            pi: expect("Pi", (&s.pi).try_into()?, vec![c.out_dim, c.m])?,
            config: c.clone(),
        })
    }
}

impl GmnmParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GmnmSnapshot::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: GmnmSnapshot = serde_json::from_str(text)?;
        GmnmParams::try_from(&snap)
    }
}
