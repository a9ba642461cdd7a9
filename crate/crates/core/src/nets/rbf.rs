use crate::engine::{Rng, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::gmnm::{GmnmConfig, GmnmParams, Mode};
use crate::module::{Binder, Bound, Module, ParamInfo};

/// Isotropic Gaussian radial basis network,
/// `out_k = Σ_i weights[k,i]·exp(−‖x − c_i‖² / (2σ_i²))` with `σ = exp(log_widths)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfParams {
    /// `[m × d]`
    pub centers: Tensor,
    /// `[m]`
    pub log_widths: Tensor,
    /// `[out_dim × m]`
    pub weights: Tensor,
}

#[derive(Clone, Debug)]
pub struct RbfVars {
    pub centers: Var,
    pub log_widths: Var,
    pub weights: Var,
}

impl RbfParams {
    /// Centres uniform over `[lo, hi]^d`, unit widths, zero weights.
    pub fn init(d: usize, m: usize, out_dim: usize, domain: (f64, f64), rng: &mut Rng) -> Result<Self> {
        if d == 0 || m == 0 || out_dim == 0 {
            return Err(invalid("RBF dimensions must be positive"));
        }
        Ok(RbfParams {
            centers: rng.uniform([m, d], domain.0, domain.1)?,
            log_widths: Tensor::zeros([m]),
            weights: Tensor::zeros([out_dim, m]),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let (m, d) = self.centers.dims2();
        (d, m, self.weights.shape()[0])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (d, m, k) = self.dims();
        if x.len() != d {
            return Err(Error::ShapeMismatch {
                op: "rbf_forward",
                lhs: vec![x.len()],
                rhs: vec![d],
            });
        }
        let phi: Vec<f64> = (0..m)
            .map(|i| {
                let r2: f64 = self.centers.row(i).iter().zip(x).map(|(c, v)| (v - c) * (v - c)).sum();
                let sigma = self.log_widths.data()[i].exp();
                (-r2 / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        Ok((0..k)
            .map(|o| self.weights.row(o).iter().zip(&phi).map(|(w, p)| w * p).sum())
            .collect())
    }
}

impl RbfVars {
    /// `[batch × out]` for `x: [batch × d]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        // ‖x − c‖² = ‖x‖² − 2x·c + ‖c‖²
        let x_sq = tape.square(x)?;
        let x_norm = tape.sum_axis(x_sq, 1)?;
        let c_sq = tape.square(self.centers)?;
        let c_norm = tape.sum_axis(c_sq, 1)?;
        let ct = tape.transpose(self.centers)?;
        let cross = tape.matmul(x, ct)?;
        let cross = tape.scale(cross, -2.0)?;
        let r2 = tape.add_row(cross, c_norm)?;
        let r2 = tape.add_col(r2, x_norm)?;
        // 1/(2σ²) = exp(−2·log σ)/2
        let inv = tape.scale(self.log_widths, -2.0)?;
        let inv = tape.exp(inv)?;
        let scaled = tape.mul_row(r2, inv)?;
        let scaled = tape.scale(scaled, -0.5)?;
        let phi = tape.exp(scaled)?;
        let wt = tape.transpose(self.weights)?;
        tape.matmul(phi, wt)
    }
}

impl Module for RbfParams {
    type Vars = RbfVars;

    fn params(&self) -> Vec<ParamInfo<'_>> {
        [
            ("centers", &self.centers),
            ("log_widths", &self.log_widths),
            ("weights", &self.weights),
        ]
        .into_iter()
        .map(|(name, value)| ParamInfo {
            name: name.to_string(),
            value,
            trainable: true,
        })
        .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.centers, &mut self.log_widths, &mut self.weights]
    }

    fn bind(&self, tape: &mut Tape) -> Bound<RbfVars> {
        let mut binder = Binder::new(tape);
        let vars = RbfVars {
            centers: binder.bind(&self.centers, true),
            log_widths: binder.bind(&self.log_widths, true),
            weights: binder.bind(&self.weights, true),
        };
        binder.finish(vars)
    }
}

/// Quadratic-mode GMNM with the same outputs: one AGP per centre with
/// `A_i = I` and `α_i = σ_i⁻²` on every axis, so `y = ‖x − c_i‖²/σ_i²`.
pub fn rbf_to_gmnm(rbf: &RbfParams) -> Result<GmnmParams> {
    let (d, m, k) = rbf.dims();
    let config = GmnmConfig::new(d, m, k).with_mode(Mode::Quadratic);
    let mut a = vec![0.0; m * d * d];
    let mut alpha_raw = vec![0.0; m * d];
    for i in 0..m {
        for p in 0..d {
            a[(i * d + p) * d + p] = 1.0;
            // stored as s with α = s²
            alpha_raw[i * d + p] = (-rbf.log_widths.data()[i]).exp();
        }
    }
    Ok(GmnmParams {
        config,
        mu: rbf.centers.clone(),
        a: Tensor::new([m, d, d], a)?,
        b: Tensor::zeros([m, d]),
        alpha_raw: Tensor::matrix(m, d, alpha_raw)?,
        beta_raw: Tensor::zeros([m]),
        pi: rbf.weights.clone(),
    })
}
