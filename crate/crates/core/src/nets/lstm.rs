use crate::engine::{Rng, Scalar, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::gmnm::{GmnmConfig, GmnmParams, GmnmVars};
use crate::module::{Binder, Bound, Module, ParamInfo};
use crate::nets::mlp::{Activation, MlpParams, MlpVars};

/// Single-layer LSTM over `[batch × T × features]` with an optional GMNM
/// block on the final hidden state and a dense scalar readout.
///
/// Gate rows are stacked as input, forget, output, candidate:
/// `W: [4u × features]`, `U: [4u × u]`, `bias: [4u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub features: usize,
    pub units: usize,
    pub w: Tensor,
    pub u: Tensor,
    pub bias: Tensor,
    pub post: Option<GmnmParams>,
    pub readout: MlpParams,
}

#[derive(Clone, Debug)]
pub struct LstmVars {
    units: usize,
    pub w: Var,
    pub u: Var,
    pub bias: Var,
    pub post: Option<GmnmVars>,
    pub readout: MlpVars,
}

impl LstmParams {
    /// Uniform(±1/√u) gate weights, forget bias 1, other biases 0.
    pub fn init(features: usize, units: usize, post: Option<GmnmConfig>, rng: &mut Rng) -> Result<Self> {
        if features == 0 || units == 0 {
            return Err(invalid("LSTM features and units must be positive"));
        }
        let bound = 1.0 / (units as f64).sqrt();
        let w = rng.uniform([4 * units, features], -bound, bound)?;
        let u = rng.uniform([4 * units, units], -bound, bound)?;
        let mut bias = vec![0.0; 4 * units];
        bias[units..2 * units].fill(1.0);
        let post = match post {
            Some(cfg) => {
                if cfg.d != units {
                    return Err(invalid(format!("GMNM post-block needs d = {units}, got {}", cfg.d)));
                }
                Some(GmnmParams::init(cfg, rng, None)?)
            }
            None => None,
        };
        let read_in = post.as_ref().map_or(units, |p| p.config.out_dim);
        let readout = MlpParams::init(&[read_in, 1], Activation::Tanh, rng)?;
        Ok(LstmParams {
            features,
            units,
            w,
            u,
            bias: Tensor::vector(bias)?,
            post,
            readout,
        })
    }

    /// One recurrence step on a single sample; returns the new `(h, c)`.
    pub fn cell_step<S: Scalar>(&self, x: &[S], h: &[S], c: &[S]) -> (Vec<S>, Vec<S>) {
        let u = self.units;
        let gate = |row: usize| -> S {
            let mut acc = S::cst(self.bias.data()[row]);
            for (k, xv) in x.iter().enumerate() {
                acc = acc + xv.scale(self.w.row(row)[k]);
            }
            for (k, hv) in h.iter().enumerate() {
                acc = acc + hv.scale(self.u.row(row)[k]);
            }
            acc
        };
        let mut h_new = Vec::with_capacity(u);
        let mut c_new = Vec::with_capacity(u);
        for j in 0..u {
            let i = gate(j).sigmoid();
            let f = gate(u + j).sigmoid();
            let o = gate(2 * u + j).sigmoid();
            let g = gate(3 * u + j).tanh();
            let cj = f * c[j] + i * g;
            h_new.push(o * cj.tanh());
            c_new.push(cj);
        }
        (h_new, c_new)
    }

    /// Forward of one sequence given row-major `[T × features]` values.
    pub fn forward_seq<S: Scalar>(&self, seq: &[S]) -> Result<S> {
        if seq.is_empty() || !seq.len().is_multiple_of(self.features) {
            return Err(Error::ShapeMismatch {
                op: "lstm_forward",
                lhs: vec![seq.len()],
                rhs: vec![0, self.features],
            });
        }
        let mut h = vec![S::cst(0.0); self.units];
        let mut c = h.clone();
        for x in seq.chunks_exact(self.features) {
            (h, c) = self.cell_step(x, &h, &c);
        }
        let feat = match &self.post {
            Some(p) => p.forward_with(&h),
            None => h,
        };
        Ok(self.readout.forward_with(&feat)[0])
    }
}

impl LstmVars {
    /// `[batch × 1]` for `seq: [batch × T × features]`.
    pub fn forward(&self, tape: &mut Tape, seq: Var) -> Result<Var> {
        let s = tape.shape(seq).to_vec();
        let w_cols = tape.shape(self.w)[1];
        if s.len() != 3 || s[1] == 0 || s[2] != w_cols {
            return Err(Error::ShapeMismatch {
                op: "lstm_forward",
                lhs: s,
                rhs: vec![0, 0, w_cols],
            });
        }
        let (batch, steps, features) = (s[0], s[1], s[2]);
        let u = self.units;
        let wt = tape.transpose(self.w)?;
        let ut = tape.transpose(self.u)?;
        let mut h = tape.constant(Tensor::zeros([batch, u]));
        let mut c = tape.constant(Tensor::zeros([batch, u]));
        for t in 0..steps {
            let xt = tape.narrow(seq, 1, t, 1)?;
            let xt = tape.reshape(xt, [batch, features])?;
            let from_x = tape.matmul(xt, wt)?;
            let from_h = tape.matmul(h, ut)?;
            let pre = tape.add(from_x, from_h)?;
            let pre = tape.add_row(pre, self.bias)?;
            let slice = |tape: &mut Tape, k: usize| tape.narrow(pre, 1, k * u, u);
            let i = slice(tape, 0)?;
            let i = tape.sigmoid(i)?;
            let f = slice(tape, 1)?;
            let f = tape.sigmoid(f)?;
            let o = slice(tape, 2)?;
            let o = tape.sigmoid(o)?;
            let g = slice(tape, 3)?;
            let g = tape.tanh(g)?;
            let keep = tape.mul(f, c)?;
            let write = tape.mul(i, g)?;
            c = tape.add(keep, write)?;
            let tc = tape.tanh(c)?;
            h = tape.mul(o, tc)?;
        }
        let feat = match &self.post {
            Some(p) => p.forward(tape, h)?,
            None => h,
        };
        self.readout.forward(tape, feat)
    }
}

impl Module for LstmParams {
    type Vars = LstmVars;

    fn params(&self) -> Vec<ParamInfo<'_>> {
        let mut out: Vec<ParamInfo<'_>> = [("w", &self.w), ("u", &self.u), ("bias", &self.bias)]
            .into_iter()
            .map(|(name, value)| ParamInfo {
                name: name.to_string(),
                value,
                trainable: true,
            })
            .collect();
        if let Some(p) = &self.post {
            out.extend(crate::module::prefixed("post", p.params()));
        }
        out.extend(crate::module::prefixed("readout", self.readout.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w, &mut self.u, &mut self.bias];
        if let Some(p) = &mut self.post {
            out.extend(p.params_mut());
        }
        out.extend(self.readout.params_mut());
        out
    }

    fn bind(&self, tape: &mut Tape) -> Bound<LstmVars> {
        let mut binder = Binder::new(tape);
        let w = binder.bind(&self.w, true);
        let u = binder.bind(&self.u, true);
        let bias = binder.bind(&self.bias, true);
        let post = self.post.as_ref().map(|p| binder.nested(p));
        let readout = binder.nested(&self.readout);
        binder.finish(LstmVars {
            units: self.units,
            w,
            u,
            bias,
            post,
            readout,
        })
    }
}
