//! Gaussian mixture-inspired nonlinear module.
//!
//! A layer of `m` Augmented Gaussian Projections (AGPs). AGP `i` centers its
//! input on `mu_i`, applies `n` linear projections `LP_n(z) = a_n·z + b_n`,
//! aggregates them into a scalar `y`, and maps it through a Gaussian
//! response. The layer output is the unnormalized mixture
//! `G_k(x) = Σ_i Pi[k,i]·f_i(x)`; mixing weights are unconstrained reals.
//!
//! Two aggregation modes are available:
//!
//! - [`Mode::Ridge`]: `y = Σ_n α_n·LP_n + β`, `f = exp(-y²/2)`.
//! - [`Mode::Quadratic`]: `y = Σ_n α_n·LP_n² + β`, `f = exp(-y/2)`, with
//!   `α = s²` and `β = t²` so `y ≥ 0` holds for every raw parameter value.
//!   This is a Mahalanobis-shaped Gaussian with precision `Σ_n α_n a_n a_nᵀ`.

mod mahalanobis;
mod snapshot;

use serde::{Deserialize, Serialize};

pub use mahalanobis::mahalanobis_embed;
pub use snapshot::GmnmSnapshot;

use crate::engine::{Rng, Scalar, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::module::{Binder, Bound, Module, ParamInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ridge,
    Quadratic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ridge => "ridge",
            Mode::Quadratic => "quadratic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuInit {
    /// Uniform over the configured domain box.
    UniformDomain,
    /// Rows drawn without replacement from a data matrix.
    DataSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmnmConfig {
    /// Input dimension.
    pub d: usize,
    /// Number of AGPs.
    pub m: usize,
    /// Projections per AGP.
    pub n: usize,
    pub out_dim: usize,
    pub mode: Mode,
    pub trainable_mu: bool,
    /// Per-AGP trainables reduced to `mu`, one projection row and one mixing
    /// weight per output; `b`, `alpha` and `beta` are frozen at `0, 1, 0`.
    pub minimal_ridge: bool,
    pub mu_init: MuInit,
    /// Per-dimension `[lo, hi]` box used by [`MuInit::UniformDomain`].
    pub domain: Vec<(f64, f64)>,
}

impl GmnmConfig {
    /// Ridge mode, `n = d`, trainable centers spread over `[-1, 1]^d`.
    pub fn new(d: usize, m: usize, out_dim: usize) -> Self {
        GmnmConfig {
            d,
            m,
            n: d,
            out_dim,
            mode: Mode::Ridge,
            trainable_mu: true,
            minimal_ridge: false,
            mu_init: MuInit::UniformDomain,
            domain: vec![(-1.0, 1.0); d],
        }
    }

    /// The 5-scalars-per-AGP parameterization (for `d = 2, out_dim = 1`).
    pub fn minimal_ridge(d: usize, m: usize, out_dim: usize) -> Self {
        GmnmConfig {
            n: 1,
            minimal_ridge: true,
            ..GmnmConfig::new(d, m, out_dim)
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_projections(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_trainable_mu(mut self, trainable: bool) -> Self {
        self.trainable_mu = trainable;
        self
    }

    pub fn with_mu_init(mut self, init: MuInit) -> Self {
        self.mu_init = init;
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = vec![(lo, hi); self.d];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.n == 0 || self.out_dim == 0 {
            return Err(invalid(format!(
                "gmnm sizes must be positive: d={} m={} n={} out_dim={}",
                self.d, self.m, self.n, self.out_dim
            )));
        }
        if self.minimal_ridge && (self.mode != Mode::Ridge || self.n != 1) {
            return Err(invalid("minimal ridge parameterization needs ridge mode and n = 1"));
        }
        if self.domain.len() != self.d {
            return Err(invalid(format!("domain has {} ranges for d = {}", self.domain.len(), self.d)));
        }
        if self.domain.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(invalid("every domain range needs lo < hi"));
        }
        Ok(())
    }

    fn shaping_trainable(&self) -> bool {
        !self.minimal_ridge
    }
}

/// Number of trainable scalars a layer with this config carries.
pub fn count_params(config: &GmnmConfig) -> usize {
    let (d, m, n, k) = (config.d, config.m, config.n, config.out_dim);
    let mut total = m * n * d + k * m;
    if config.trainable_mu {
        total += m * d;
    }
    if config.shaping_trainable() {
        total += m * n + m * n + m;
    }
    total
}

/// Full parameter set of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GmnmParams {
    pub config: GmnmConfig,
    /// Centers, `[m × d]`.
    pub mu: Tensor,
    /// Projection weights, `[m × n × d]`.
    pub a: Tensor,
    /// Projection offsets, `[m × n]`.
    pub b: Tensor,
    /// Aggregation weights as stored; squared in quadratic mode. `[m × n]`.
    pub alpha_raw: Tensor,
    /// Offset as stored; squared in quadratic mode. `[m]`.
    pub beta_raw: Tensor,
    /// Mixing weights, `[out_dim × m]`.
    pub pi: Tensor,
}

/// Affine collapse of one ridge AGP: `y = w·(x − mu_i) + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeCollapse {
    pub w: Tensor,
    pub c: f64,
}

impl GmnmParams {
    /// Fresh parameters.
    ///
    /// Centers come from the domain box or from rows of `data`; projection
    /// weights are uniform in `±1/√d`; `b`, `beta` start at zero; `alpha`
    /// is uniform in `[0, 1)` (fixed at 1 for minimal ridge); mixing weights
    /// start at zero so the layer is initially the zero function.
    pub fn init(config: GmnmConfig, rng: &mut Rng, data: Option<&Tensor>) -> Result<Self> {
        config.validate()?;
        let (d, m, n, k) = (config.d, config.m, config.n, config.out_dim);

        let mu = match config.mu_init {
            MuInit::UniformDomain => {
                let mut rows = Vec::with_capacity(m * d);
                for _ in 0..m {
                    for &(lo, hi) in &config.domain {
                        rows.push(rng.uniform_scalar(lo, hi));
                    }
                }
                Tensor::matrix(m, d, rows)?
            }
            MuInit::DataSample => {
                let data = data.ok_or_else(|| invalid("data_sample initialization needs data"))?;
                if data.rank() != 2 || data.shape()[1] != d {
                    return Err(Error::ShapeMismatch {
                        op: "gmnm_init",
                        lhs: data.shape().to_vec(),
                        rhs: vec![m, d],
                    });
                }
                let rows = data.shape()[0];
                if rows < m {
                    return Err(invalid(format!("data_sample needs at least m = {m} rows, got {rows}")));
                }
                let picks = rng.choose_distinct(rows, m)?;
                let flat = picks.iter().flat_map(|&r| data.row(r).iter().copied()).collect();
                Tensor::matrix(m, d, flat)?
            }
        };

        let bound = 1.0 / (d as f64).sqrt();
        let a = rng.uniform([m, n, d], -bound, bound)?;
        let alpha_raw = if config.minimal_ridge {
            Tensor::full([m, n], 1.0)
        } else {
            rng.uniform([m, n], 0.0, 1.0)?
        };

        Ok(GmnmParams {
            mu,
            a,
            b: Tensor::zeros([m, n]),
            alpha_raw,
            beta_raw: Tensor::zeros([m]),
            pi: Tensor::zeros([k, m]),
            config,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Effective aggregation weight `α_{i,n}`.
    pub fn alpha(&self, i: usize, p: usize) -> f64 {
        let raw = self.alpha_raw.data()[i * self.config.n + p];
        match self.mode() {
            Mode::Ridge => raw,
            Mode::Quadratic => raw * raw,
        }
    }

    /// Effective offset `β_i`.
    pub fn beta(&self, i: usize) -> f64 {
        let raw = self.beta_raw.data()[i];
        match self.mode() {
            Mode::Ridge => raw,
            Mode::Quadratic => raw * raw,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.d {
            return Err(Error::ShapeMismatch {
                op: "gmnm",
                lhs: vec![x.len()],
                rhs: vec![self.config.d],
            });
        }
        Ok(())
    }

    /// Aggregated projection `y_i(x)` evaluated over any [`Scalar`].
    pub fn projection_with<S: Scalar>(&self, i: usize, x: &[S]) -> S {
        let (d, n) = (self.config.d, self.config.n);
        let mu = &self.mu.data()[i * d..(i + 1) * d];
        let a = &self.a.data()[i * n * d..(i + 1) * n * d];
        let b = &self.b.data()[i * n..(i + 1) * n];
        let mut y = S::cst(self.beta(i));
        for p in 0..n {
            let mut lp = S::cst(b[p]);
            for k in 0..d {
                lp = lp + (x[k] - S::cst(mu[k])).scale(a[p * d + k]);
            }
            let term = match self.mode() {
                Mode::Ridge => lp,
                Mode::Quadratic => lp.square(),
            };
            y = y + term.scale(self.alpha(i, p));
        }
        y
    }

    /// Response `f_i(x)` of AGP `i`, in `(0, 1]`.
    pub fn agp_with<S: Scalar>(&self, i: usize, x: &[S]) -> S {
        let y = self.projection_with(i, x);
        match self.mode() {
            Mode::Ridge => y.square().scale(-0.5).exp(),
            Mode::Quadratic => y.scale(-0.5).exp(),
        }
    }

    /// Layer output `G(x)` over any [`Scalar`].
    pub fn forward_with<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (m, k) = (self.config.m, self.config.out_dim);
        let responses: Vec<S> = (0..m).map(|i| self.agp_with(i, x)).collect();
        (0..k)
            .map(|o| {
                let pi = &self.pi.data()[o * m..(o + 1) * m];
                responses.iter().zip(pi).fold(S::cst(0.0), |acc, (&f, &w)| acc + f.scale(w))
            })
            .collect()
    }

    pub fn agp_projection(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        self.check_agp(i)?;
        Ok(self.projection_with(i, x))
    }

    pub fn agp_forward(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        self.check_agp(i)?;
        Ok(self.agp_with(i, x))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_with(x))
    }

    fn check_agp(&self, i: usize) -> Result<()> {
        if i >= self.config.m {
            return Err(invalid(format!("AGP index {i} out of range for m = {}", self.config.m)));
        }
        Ok(())
    }

    fn require_ridge(&self, op: &'static str) -> Result<()> {
        match self.mode() {
            Mode::Ridge => Ok(()),
            Mode::Quadratic => Err(Error::WrongMode { op, mode: "quadratic" }),
        }
    }

    /// `w = Σ_n α_n a_n`, `c = Σ_n α_n b_n + β` for ridge AGP `i`.
    pub fn collapse_ridge(&self, i: usize) -> Result<RidgeCollapse> {
        self.require_ridge("collapse_ridge")?;
        self.check_agp(i)?;
        let (d, n) = (self.config.d, self.config.n);
        let a = &self.a.data()[i * n * d..(i + 1) * n * d];
        let b = &self.b.data()[i * n..(i + 1) * n];
        let mut w = vec![0.0; d];
        let mut c = 0.0;
        for p in 0..n {
            let alpha = self.alpha(i, p);
            for k in 0..d {
                w[k] += alpha * a[p * d + k];
            }
            c += alpha * b[p];
        }
        c += self.beta(i);
        Ok(RidgeCollapse { w: Tensor::vector(w)?, c })
    }

    /// `(y_i, f_i, w_i)` for every ridge AGP at `x`.
    fn ridge_terms(&self, x: &[f64]) -> Result<Vec<(f64, f64, RidgeCollapse)>> {
        let d = self.config.d;
        (0..self.config.m)
            .map(|i| {
                let col = self.collapse_ridge(i)?;
                let mu = &self.mu.data()[i * d..(i + 1) * d];
                let y = col
                    .w
                    .data()
                    .iter()
                    .zip(x.iter().zip(mu))
                    .fold(col.c, |acc, (w, (xk, mk))| acc + w * (xk - mk));
                Ok((y, (-0.5 * y * y).exp(), col))
            })
            .collect()
    }

    /// Closed-form Jacobian `∂G_k/∂x_j = Σ_i Pi[k,i]·f_i·(−y_i)·w_{i,j}`,
    /// shape `[out_dim × d]`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Tensor> {
        self.require_ridge("gmnm_input_gradient")?;
        self.check_input(x)?;
        let (d, m, k) = (self.config.d, self.config.m, self.config.out_dim);
        let terms = self.ridge_terms(x)?;
        let mut out = vec![0.0; k * d];
        for o in 0..k {
            for (i, (y, f, col)) in terms.iter().enumerate() {
                let coef = self.pi.data()[o * m + i] * f * (-y);
                for j in 0..d {
                    out[o * d + j] += coef * col.w.data()[j];
                }
            }
        }
        Tensor::matrix(k, d, out)
    }

    /// Closed-form Laplacian `Σ_j ∂²G_k/∂x_j² = Σ_i Pi[k,i]·f_i·(y_i²−1)·‖w_i‖²`.
    pub fn input_laplacian(&self, x: &[f64]) -> Result<Tensor> {
        self.require_ridge("gmnm_input_laplacian")?;
        self.check_input(x)?;
        let (m, k) = (self.config.m, self.config.out_dim);
        let terms = self.ridge_terms(x)?;
        let out = (0..k)
            .map(|o| {
                terms.iter().enumerate().fold(0.0, |acc, (i, (y, f, col))| {
                    let norm2: f64 = col.w.data().iter().map(|w| w * w).sum();
                    acc + self.pi.data()[o * m + i] * f * (y * y - 1.0) * norm2
                })
            })
            .collect();
        Tensor::vector(out)
    }

    fn trainable_flags(&self) -> [bool; 6] {
        let shaping = self.config.shaping_trainable();
        [self.config.trainable_mu, true, shaping, shaping, shaping, true]
    }
}

/// Tape handles for a bound [`GmnmParams`].
#[derive(Clone, Debug)]
pub struct GmnmVars {
    config: GmnmConfig,
    pub mu: Var,
    pub a: Var,
    pub b: Var,
    pub alpha_raw: Var,
    pub beta_raw: Var,
    pub pi: Var,
}

/// Intermediate batch quantities of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GmnmActivations {
    /// `[batch × m]`
    pub y: Var,
    /// `[batch × m]`
    pub f: Var,
    /// `[batch × out_dim]`
    pub out: Var,
}

impl GmnmVars {
    pub fn config(&self) -> &GmnmConfig {
        &self.config
    }

    fn effective(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        match self.config.mode {
            Mode::Ridge => Ok(raw),
            Mode::Quadratic => tape.square(raw),
        }
    }

    /// Batched forward over `x: [batch × d]`. Ridge mode uses the fused
    /// mixture primitive; quadratic mode the staged graph.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.config.mode {
            Mode::Ridge => self.fused(tape, x, false),
            Mode::Quadratic => Ok(self.activations(tape, x)?.out),
        }
    }

    /// Forward through the staged graph of elementary primitives.
    pub fn forward_staged(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(self.activations(tape, x)?.out)
    }

    fn fused(&self, tape: &mut Tape, x: Var, laplacian: bool) -> Result<Var> {
        self.check_batch(tape, x)?;
        let w = self.collapsed_directions(tape)?;
        let c = self.collapsed_offsets(tape)?;
        tape.ridge_mixture(x, self.mu, w, c, self.pi, laplacian)
    }

    fn check_batch(&self, tape: &Tape, x: Var) -> Result<()> {
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.config.d {
            return Err(Error::ShapeMismatch {
                op: "gmnm_forward",
                lhs: xs.to_vec(),
                rhs: vec![0, self.config.d],
            });
        }
        Ok(())
    }

    pub fn activations(&self, tape: &mut Tape, x: Var) -> Result<GmnmActivations> {
        let GmnmConfig { d, m, n, .. } = self.config;
        self.check_batch(tape, x)?;
        let batch = tape.shape(x)[0];

        // LP[b, i, p] = a_ip·x_b − a_ip·mu_i + b_ip
        let a_flat = tape.reshape(self.a, [m * n, d])?;
        let a_t = tape.transpose(a_flat)?;
        let xa = tape.matmul(x, a_t)?;
        let mu_rep = tape.expand(self.mu, m, n, d, [m * n, d])?;
        let a_mu = tape.mul(a_flat, mu_rep)?;
        let centered = tape.sum_axis(a_mu, 1)?;
        let b_flat = tape.reshape(self.b, [m * n])?;
        let shift = tape.sub(b_flat, centered)?;
        let lp = tape.add_row(xa, shift)?;

        let term = match self.config.mode {
            Mode::Ridge => lp,
            Mode::Quadratic => tape.square(lp)?,
        };
        let alpha = self.effective(tape, self.alpha_raw)?;
        let alpha_flat = tape.reshape(alpha, [m * n])?;
        let weighted = tape.mul_row(term, alpha_flat)?;
        let weighted = tape.reshape(weighted, [batch, m, n])?;
        let summed = tape.sum_axis(weighted, 2)?;
        let beta = self.effective(tape, self.beta_raw)?;
        let y = tape.add_row(summed, beta)?;

        let exponent = match self.config.mode {
            Mode::Ridge => {
                let sq = tape.square(y)?;
                tape.scale(sq, -0.5)?
            }
            Mode::Quadratic => tape.scale(y, -0.5)?,
        };
        let f = tape.exp(exponent)?;
        let pi_t = tape.transpose(self.pi)?;
        let out = tape.matmul(f, pi_t)?;
        Ok(GmnmActivations { y, f, out })
    }

    /// Ridge-mode collapsed directions `w: [m × d]`.
    pub fn collapsed_directions(&self, tape: &mut Tape) -> Result<Var> {
        let GmnmConfig { d, m, n, .. } = self.config;
        if self.config.mode != Mode::Ridge {
            return Err(Error::WrongMode {
                op: "collapsed_directions",
                mode: "quadratic",
            });
        }
        let a_flat = tape.reshape(self.a, [m * n, d])?;
        let alpha_flat = tape.reshape(self.alpha_raw, [m * n])?;
        let scaled = tape.mul_col(a_flat, alpha_flat)?;
        let scaled = tape.reshape(scaled, [m, n, d])?;
        tape.sum_axis(scaled, 1)
    }

    /// Ridge-mode collapsed offsets `c: [m]`.
    pub fn collapsed_offsets(&self, tape: &mut Tape) -> Result<Var> {
        let GmnmConfig { m, n, .. } = self.config;
        let alpha_flat = tape.reshape(self.alpha_raw, [m * n])?;
        let b_flat = tape.reshape(self.b, [m * n])?;
        let ab = tape.mul(b_flat, alpha_flat)?;
        let ab = tape.reshape(ab, [m, n])?;
        let summed = tape.sum_axis(ab, 1)?;
        tape.add(summed, self.beta_raw)
    }

    /// Batched closed-form input Laplacian `[batch × out_dim]` (ridge mode),
    /// on the tape so parameter gradients flow through it.
    pub fn laplacian(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.config.mode != Mode::Ridge {
            return Err(Error::WrongMode {
                op: "laplacian",
                mode: "quadratic",
            });
        }
        self.fused(tape, x, true)
    }

    /// [`GmnmVars::laplacian`] through the staged graph; returns the forward
    /// output as well.
    pub fn laplacian_staged(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let act = self.activations(tape, x)?;
        let w = self.collapsed_directions(tape)?;
        let w_sq = tape.square(w)?;
        let norm2 = tape.sum_axis(w_sq, 1)?;
        let y_sq = tape.square(act.y)?;
        let curv = tape.affine(y_sq, 1.0, -1.0)?;
        let fc = tape.mul(act.f, curv)?;
        let weighted = tape.mul_row(fc, norm2)?;
        let pi_t = tape.transpose(self.pi)?;
        let lap = tape.matmul(weighted, pi_t)?;
        Ok((act.out, lap))
    }
}

impl Module for GmnmParams {
    type Vars = GmnmVars;

    fn params(&self) -> Vec<ParamInfo<'_>> {
        let flags = self.trainable_flags();
        let tensors = [&self.mu, &self.a, &self.b, &self.alpha_raw, &self.beta_raw, &self.pi];
        let names = ["mu", "a", "b", "alpha_raw", "beta_raw", "pi"];
        names
            .iter()
            .zip(tensors)
            .zip(flags)
            .map(|((name, value), trainable)| ParamInfo {
                name: name.to_string(),
                value,
                trainable,
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.mu,
            &mut self.a,
            &mut self.b,
            &mut self.alpha_raw,
            &mut self.beta_raw,
            &mut self.pi,
        ]
    }

    fn bind(&self, tape: &mut Tape) -> Bound<GmnmVars> {
        let flags = self.trainable_flags();
        let mut binder = Binder::new(tape);
        let vars = GmnmVars {
            config: self.config.clone(),
            mu: binder.bind(&self.mu, flags[0]),
            a: binder.bind(&self.a, flags[1]),
            b: binder.bind(&self.b, flags[2]),
            alpha_raw: binder.bind(&self.alpha_raw, flags[3]),
            beta_raw: binder.bind(&self.beta_raw, flags[4]),
            pi: binder.bind(&self.pi, flags[5]),
        };
        binder.finish(vars)
    }
}
