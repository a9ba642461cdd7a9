use serde::{Deserialize, Serialize};

use crate::engine::{Rng, Scalar, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::module::{Binder, Bound, Module, ParamInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    pub fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
            Activation::Silu => v * v.sigmoid(),
        }
    }

    pub fn tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Silu => {
                let s = tape.sigmoid(x)?;
                tape.mul(x, s)
            }
        }
    }

    /// First and second derivatives of the activation at `a`, on the tape.
    fn derivatives(self, tape: &mut Tape, a: Var, out: Var) -> Result<(Var, Var)> {
        match self {
            Activation::Tanh => {
                // σ' = 1 − t², σ'' = −2t·σ'
                let t2 = tape.square(out)?;
                let d1 = tape.affine(t2, -1.0, 1.0)?;
                let t_d1 = tape.mul(out, d1)?;
                let d2 = tape.scale(t_d1, -2.0)?;
                Ok((d1, d2))
            }
            Activation::Relu => {
                let mask: Vec<f64> = tape.value(a).data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                let shape = tape.shape(a).to_vec();
                let d1 = tape.constant(Tensor::new(shape.clone(), mask)?);
                let d2 = tape.constant(Tensor::zeros(shape));
                Ok((d1, d2))
            }
            Activation::Silu => {
                // s = σ(a): σ' = s + a·s(1−s), σ'' = s(1−s)(2 + a(1−2s))
                let s = tape.sigmoid(a)?;
                let one_minus = tape.affine(s, -1.0, 1.0)?;
                let ds = tape.mul(s, one_minus)?;
                let a_ds = tape.mul(a, ds)?;
                let d1 = tape.add(s, a_ds)?;
                let two_s = tape.affine(s, -2.0, 1.0)?;
                let a_term = tape.mul(a, two_s)?;
                let inner = tape.affine(a_term, 1.0, 2.0)?;
                let d2 = tape.mul(ds, inner)?;
                Ok((d1, d2))
            }
        }
    }
}

/// Fully connected network; weights are `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    activation: Activation,
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

pub fn mlp_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid(format!("MLP widths {widths:?} need at least two positive entries")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(rng.uniform([w[1], w[0]], -bound, bound)?);
            biases.push(Tensor::zeros([w[1]]));
        }
        Ok(MlpParams {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    /// Single-sample forward on any scalar type.
    pub fn forward_with<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let layers = self.weights.len();
        let mut h = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (rows, cols) = w.dims2();
            let mut next = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = w.row(r);
                let mut acc = S::cst(b.data()[r]);
                for c in 0..cols {
                    acc = acc + h[c].scale(row[c]);
                }
                next.push(if l + 1 < layers { self.activation.apply(acc) } else { acc });
            }
            h = next;
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                lhs: vec![x.len()],
                rhs: vec![self.input_dim()],
            });
        }
        Ok(self.forward_with(x))
    }
}

impl MlpVars {
    /// `[batch × out]` for `x: [batch × in]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let layers = self.weights.len();
        let mut h = x;
        for l in 0..layers {
            let wt = tape.transpose(self.weights[l])?;
            let z = tape.matmul(h, wt)?;
            let a = tape.add_row(z, self.biases[l])?;
            h = if l + 1 < layers { self.activation.tape(tape, a)? } else { a };
        }
        Ok(h)
    }

    /// Value and input Laplacian, each `[batch × out]`, by carrying first and
    /// second directional derivatives along every input axis through the
    /// network on the tape.
    pub fn laplacian(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let (batch, d) = {
            let s = tape.shape(x);
            (s[0], s[1])
        };
        let layers = self.weights.len();
        let mut h = x;
        let mut streams = Vec::with_capacity(d);
        for k in 0..d {
            let mut seed = vec![0.0; batch * d];
            for r in 0..batch {
                seed[r * d + k] = 1.0;
            }
            streams.push((tape.constant(Tensor::matrix(batch, d, seed)?), None::<Var>));
        }
        for l in 0..layers {
            let wt = tape.transpose(self.weights[l])?;
            let z = tape.matmul(h, wt)?;
            let a = tape.add_row(z, self.biases[l])?;
            let mut lin = Vec::with_capacity(d);
            for (d1, d2) in &streams {
                let a1 = tape.matmul(*d1, wt)?;
                let a2 = match d2 {
                    Some(v) => Some(tape.matmul(*v, wt)?),
                    None => None,
                };
                lin.push((a1, a2));
            }
            if l + 1 == layers {
                h = a;
                streams = lin;
                break;
            }
            let out = self.activation.tape(tape, a)?;
            let (s1, s2) = self.activation.derivatives(tape, a, out)?;
            streams.clear();
            for (a1, a2) in lin {
                let n1 = tape.mul(s1, a1)?;
                let sq = tape.square(a1)?;
                let curv = tape.mul(s2, sq)?;
                let n2 = match a2 {
                    Some(v) => {
                        let lin2 = tape.mul(s1, v)?;
                        tape.add(curv, lin2)?
                    }
                    None => curv,
                };
                streams.push((n1, Some(n2)));
            }
            h = out;
        }
        let mut lap: Option<Var> = None;
        for (_, d2) in streams {
            let d2 = match d2 {
                Some(v) => v,
                // A single affine layer has no curvature.
                None => tape.constant(Tensor::zeros(tape.shape(h).to_vec())),
            };
            lap = Some(match lap {
                Some(acc) => tape.add(acc, d2)?,
                None => d2,
            });
        }
        Ok((h, lap.expect("input dimension is positive")))
    }
}

impl Module for MlpParams {
    type Vars = MlpVars;

    fn params(&self) -> Vec<ParamInfo<'_>> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push(ParamInfo {
                name: format!("w{l}"),
                value: w,
                trainable: true,
            });
            out.push(ParamInfo {
                name: format!("b{l}"),
                value: b,
                trainable: true,
            });
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn bind(&self, tape: &mut Tape) -> Bound<MlpVars> {
        let mut binder = Binder::new(tape);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            weights.push(binder.bind(w, true));
            biases.push(binder.bind(b, true));
        }
        binder.finish(MlpVars {
            activation: self.activation,
            weights,
            biases,
        })
    }
}
