use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpParams, MlpVars};
use crate::engine::{Rng, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::gmnm::{GmnmConfig, GmnmParams, GmnmVars};
use crate::module::{Binder, Bound, Module, ParamInfo};

/// Input and layer sizes of a two-stage conv stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub channels: (usize, usize),
    pub classes: usize,
}

impl ConvShape {
    /// Spatial extent after conv(3×3 valid) + pool, twice.
    pub fn feature_hw(&self) -> Result<(usize, usize)> {
        let stage = |v: usize| -> Option<usize> { v.checked_sub(2).map(|c| c / 2).filter(|&p| p >= 1) };
        match (stage(self.height).and_then(stage), stage(self.width).and_then(stage)) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(invalid(format!(
                "input {}×{} is too small for two conv+pool stages",
                self.height, self.width
            ))),
        }
    }

    pub fn feature_dim(&self) -> Result<usize> {
        let (h, w) = self.feature_hw()?;
        Ok(h * w * self.channels.1)
    }

    /// Trainable scalars of the two conv layers.
    pub fn conv_param_count(&self) -> usize {
        let (c1, c2) = self.channels;
        9 * self.in_channels * c1 + c1 + 9 * c1 * c2 + c2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Dense(MlpParams),
    Gmnm(GmnmParams),
}

#[derive(Clone, Debug)]
pub enum HeadVars {
    Dense(MlpVars),
    Gmnm(GmnmVars),
}

/// conv → relu → pool → conv → relu → pool → flatten → head.
/// Kernels are `[3 × 3 × in × out]`, images `[batch × h × w × c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStackParams {
    pub shape: ConvShape,
    pub k1: Tensor,
    pub b1: Tensor,
    pub k2: Tensor,
    pub b2: Tensor,
    pub head: Head,
}

#[derive(Clone, Debug)]
pub struct ConvStackVars {
    pub k1: Var,
    pub b1: Var,
    pub k2: Var,
    pub b2: Var,
    pub head: HeadVars,
}

impl ConvStackParams {
    /// He-uniform kernels and zero biases, with a single affine dense head.
    pub fn init_dense(shape: ConvShape, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let feat = shape.feature_dim()?;
        let (k1, b1, k2, b2) = init_kernels(&shape, rng)?;
        let mut widths = vec![feat];
        widths.extend_from_slice(hidden);
        widths.push(shape.classes);
        let head = Head::Dense(MlpParams::init(&widths, Activation::Relu, rng)?);
        Ok(ConvStackParams {
            shape,
            k1,
            b1,
            k2,
            b2,
            head,
        })
    }

    /// Same conv layers with a GMNM head over the flattened features. With
    /// data-sampled centres they are drawn from the initial features of
    /// `images`.
    pub fn init_gmnm(shape: ConvShape, head: GmnmConfig, images: Option<&Tensor>, rng: &mut Rng) -> Result<Self> {
        let feat = shape.feature_dim()?;
        if head.d != feat || head.out_dim != shape.classes {
            return Err(invalid(format!(
                "GMNM head must map {feat} features to {} classes, got d = {}, out = {}",
                shape.classes, head.d, head.out_dim
            )));
        }
        let (k1, b1, k2, b2) = init_kernels(&shape, rng)?;
        let mut params = ConvStackParams {
            shape,
            k1,
            b1,
            k2,
            b2,
            head: Head::Dense(MlpParams::init(&[feat, 1], Activation::Relu, rng)?),
        };
        let features = match images {
            Some(imgs) => Some(params.features(imgs)?),
            None => None,
        };
        params.head = Head::Gmnm(GmnmParams::init(head, rng, features.as_ref())?);
        Ok(params)
    }

    /// Flattened conv features `[batch × feature_dim]`, no gradients.
    pub fn features(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let k1 = tape.constant(self.k1.clone());
        let b1 = tape.constant(self.b1.clone());
        let k2 = tape.constant(self.k2.clone());
        let b2 = tape.constant(self.b2.clone());
        let x = tape.constant(images.clone());
        let f = conv_features(&mut tape, x, [k1, b1, k2, b2])?;
        Ok(tape.value(f).clone())
    }
}

fn init_kernels(shape: &ConvShape, rng: &mut Rng) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    shape.feature_hw()?;
    let (c1, c2) = shape.channels;
    if shape.in_channels == 0 || c1 == 0 || c2 == 0 || shape.classes == 0 {
        return Err(invalid("conv channel and class counts must be positive"));
    }
    let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
    let b1_bound = he(9 * shape.in_channels);
    let k1 = rng.uniform([3, 3, shape.in_channels, c1], -b1_bound, b1_bound)?;
    let b2_bound = he(9 * c1);
    let k2 = rng.uniform([3, 3, c1, c2], -b2_bound, b2_bound)?;
    Ok((k1, Tensor::zeros([c1]), k2, Tensor::zeros([c2])))
}

fn conv_features(tape: &mut Tape, x: Var, [k1, b1, k2, b2]: [Var; 4]) -> Result<Var> {
    let batch = tape.shape(x)[0];
    let h = tape.conv2d(x, k1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h)?;
    let h = tape.maxpool2(h)?;
    let h = tape.conv2d(h, k2)?;
    let h = tape.add_row(h, b2)?;
    let h = tape.relu(h)?;
    let h = tape.maxpool2(h)?;
    let feat: usize = tape.shape(h)[1..].iter().product();
    tape.reshape(h, [batch, feat])
}

impl ConvStackVars {
    /// `[batch × classes]` for `images: [batch × h × w × c]`.
    pub fn forward(&self, tape: &mut Tape, images: Var) -> Result<Var> {
        let s = tape.shape(images);
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv_forward",
                lhs: s.to_vec(),
                rhs: vec![0, 0, 0, 0],
            });
        }
        let feat = conv_features(tape, images, [self.k1, self.b1, self.k2, self.b2])?;
        match &self.head {
            HeadVars::Dense(v) => v.forward(tape, feat),
            HeadVars::Gmnm(v) => v.forward(tape, feat),
        }
    }
}

impl Module for ConvStackParams {
    type Vars = ConvStackVars;

    fn params(&self) -> Vec<ParamInfo<'_>> {
        let mut out: Vec<ParamInfo<'_>> = [("k1", &self.k1), ("b1", &self.b1), ("k2", &self.k2), ("b2", &self.b2)]
            .into_iter()
            .map(|(name, value)| ParamInfo {
                name: name.to_string(),
                value,
                trainable: true,
            })
            .collect();
        let head = match &self.head {
            Head::Dense(p) => p.params(),
            Head::Gmnm(p) => p.params(),
        };
        out.extend(crate::module::prefixed("head", head));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.k1, &mut self.b1, &mut self.k2, &mut self.b2];
        match &mut self.head {
            Head::Dense(p) => out.extend(p.params_mut()),
            Head::Gmnm(p) => out.extend(p.params_mut()),
        }
        out
    }

    fn bind(&self, tape: &mut Tape) -> Bound<ConvStackVars> {
        let mut binder = Binder::new(tape);
        let k1 = binder.bind(&self.k1, true);
        let b1 = binder.bind(&self.b1, true);
        let k2 = binder.bind(&self.k2, true);
        let b2 = binder.bind(&self.b2, true);
        let head = match &self.head {
            Head::Dense(p) => HeadVars::Dense(binder.nested(p)),
            Head::Gmnm(p) => HeadVars::Gmnm(binder.nested(p)),
        };
        binder.finish(ConvStackVars { k1, b1, k2, b2, head })
    }
}
