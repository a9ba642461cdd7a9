//! Poisson problem on [−1,1]² with zero boundary and source −2π² sin(πx) sin(πy).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::engine::{hyperdual_grad_laplacian, HyperDual, Rng, Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::gmnm::GmnmParams;
use crate::module::Module;
use crate::nets::MlpParams;
use crate::optim::{Evaluation, Objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeConfig {
    /// Interior collocation points, redrawn every step.
    pub n_interior: usize,
    /// Boundary points, drawn once.
    pub n_boundary: usize,
    /// Points per axis of the evaluation grid.
    pub grid: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        PdeConfig {
            n_interior: 1024,
            n_boundary: 256,
            grid: 101,
        }
    }
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_interior == 0 || self.n_boundary == 0 || self.grid == 0 {
            return Err(invalid("PDE point counts must be positive"));
        }
        Ok(())
    }
}

/// `sin(πx)`, exactly zero at integers: the argument is reduced to
/// `[−½, ½]` before scaling by π, and the reduction is exact.
pub fn sin_pi(x: f64) -> f64 {
    let k = x.round();
    let s = (PI * (x - k)).sin();
    if k.rem_euclid(2.0) == 0.0 {
        s
    } else {
        -s
    }
}

pub fn exact_solution(x: &[f64]) -> f64 {
    sin_pi(x[0]) * sin_pi(x[1])
}

/// Right-hand side: the Laplacian of [`exact_solution`].
pub fn source(x: &[f64]) -> f64 {
    -2.0 * PI * PI * exact_solution(x)
}

/// A scalar field on R² with a pointwise Laplacian.
pub trait Field2d {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn laplacian(&self, x: &[f64]) -> Result<f64>;
}

/// The closed-form solution as a field.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactSolution;

impl Field2d for ExactSolution {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(exact_solution(x))
    }
    fn laplacian(&self, x: &[f64]) -> Result<f64> {
        Ok(source(x))
    }
}

/// The zero function.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl Field2d for ZeroField {
    fn value(&self, _: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
    fn laplacian(&self, _: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

/// A trainable field whose value and Laplacian are available on the tape.
pub trait PoissonModel: Module + Field2d {
    /// `[batch × 1]` values at `x: [batch × 2]`.
    fn tape_value(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var>;
    /// `[batch × 1]` Laplacians at `x: [batch × 2]`.
    fn tape_laplacian(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var>;
}

fn scalar_output(out: Vec<f64>) -> Result<f64> {
    match out.as_slice() {
        [v] => Ok(*v),
        _ => Err(invalid(format!("PDE model must have one output, got {}", out.len()))),
    }
}

impl Field2d for GmnmParams {
    fn value(&self, x: &[f64]) -> Result<f64> {
        scalar_output(self.forward(x)?)
    }
    fn laplacian(&self, x: &[f64]) -> Result<f64> {
        scalar_output(self.input_laplacian(x)?.into_data())
    }
}

impl PoissonModel for GmnmParams {
    fn tape_value(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
    fn tape_laplacian(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.laplacian(tape, x)
    }
}

impl Field2d for MlpParams {
    fn value(&self, x: &[f64]) -> Result<f64> {
        scalar_output(self.forward(x)?)
    }
    fn laplacian(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(invalid(format!("PDE model must have one output, got {}", self.output_dim())));
        }
        let f = |v: &[HyperDual]| Ok(self.forward_with(v)[0]);
        Ok(hyperdual_grad_laplacian(f, x)?.1)
    }
}

impl PoissonModel for MlpParams {
    fn tape_value(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
    fn tape_laplacian(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        Ok(vars.laplacian(tape, x)?.1)
    }
}

/// `n` points uniform on the perimeter of the square, `[n × 2]`.
pub fn boundary_points(n: usize, rng: &mut Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let t = rng.uniform_scalar(-1.0, 1.0);
        let (x, y) = match rng.below(4) {
            0 => (-1.0, t),
            1 => (1.0, t),
            2 => (t, -1.0),
            _ => (t, 1.0),
        };
        data.extend_from_slice(&[x, y]);
    }
    Tensor::matrix(n, 2, data)
}

/// `n` points uniform in the open square, `[n × 2]`.
pub fn interior_points(n: usize, rng: &mut Rng) -> Result<Tensor> {
    rng.uniform([n, 2], -1.0, 1.0)
}

/// `(boundary_mse, residual_mse)` on a fresh draw of points.
pub fn pde_losses(model: &dyn Field2d, cfg: &PdeConfig, rng: &mut Rng) -> Result<(f64, f64)> {
    cfg.validate()?;
    let boundary = boundary_points(cfg.n_boundary, rng)?;
    let interior = interior_points(cfg.n_interior, rng)?;
    losses_on(model, &boundary, &interior)
}

fn losses_on(model: &dyn Field2d, boundary: &Tensor, interior: &Tensor) -> Result<(f64, f64)> {
    let (nb, _) = boundary.dims2();
    let (ni, _) = interior.dims2();
    let mut b = 0.0;
    for i in 0..nb {
        b += model.value(boundary.row(i))?.powi(2);
    }
    let mut r = 0.0;
    for i in 0..ni {
        let x = interior.row(i);
        r += (model.laplacian(x)? - source(x)).powi(2);
    }
    Ok((b / nb as f64, r / ni as f64))
}

/// RMS of `model − exact` over the cell centres of a uniform
/// `resolution²` grid on [−1,1]²; a single cell is the centre point.
pub fn l2_error(model: &dyn Field2d, resolution: usize) -> Result<f64> {
    if resolution == 0 {
        return Err(invalid("grid resolution must be positive"));
    }
    let coord = |i: usize| -1.0 + (2 * i + 1) as f64 / resolution as f64;
    let mut acc = 0.0;
    for i in 0..resolution {
        for j in 0..resolution {
            let x = [coord(i), coord(j)];
            acc += (model.value(&x)? - exact_solution(&x)).powi(2);
        }
    }
    Ok((acc / (resolution * resolution) as f64).sqrt())
}

/// Boundary + residual training objective.
///
/// Evaluation reports `train_loss` as the loss on a fixed validation draw,
/// `test_loss` as the grid L2 error, and both loss terms as extras.
pub struct PoissonObjective {
    cfg: PdeConfig,
    boundary: Tensor,
    target_boundary: Tensor,
    rng: Rng,
    eval_boundary: Tensor,
    eval_interior: Tensor,
}

impl PoissonObjective {
    pub fn new(cfg: PdeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut setup = Rng::fork(seed, 0x7064_65);
        let boundary = boundary_points(cfg.n_boundary, &mut setup)?;
        let eval_boundary = boundary_points(cfg.n_boundary, &mut setup)?;
        let eval_interior = interior_points(cfg.n_interior, &mut setup)?;
        Ok(PoissonObjective {
            target_boundary: Tensor::zeros([cfg.n_boundary, 1]),
            rng: Rng::fork(seed, 0x636f_6c),
            cfg,
            boundary,
            eval_boundary,
            eval_interior,
        })
    }
}

impl<M: PoissonModel> Objective<M> for PoissonObjective {
    fn train_len(&self) -> usize {
        1
    }

    fn loss(&mut self, model: &M, tape: &mut Tape, vars: &M::Vars, _batch: &[usize]) -> Result<Var> {
        let interior = interior_points(self.cfg.n_interior, &mut self.rng)?;
        let rhs: Vec<f64> = (0..self.cfg.n_interior).map(|i| source(interior.row(i))).collect();
        let rhs = tape.constant(Tensor::matrix(self.cfg.n_interior, 1, rhs)?);
        let xi = tape.constant(interior);
        let xb = tape.constant(self.boundary.clone());
        let zero = tape.constant(self.target_boundary.clone());

        let ub = model.tape_value(tape, vars, xb)?;
        let boundary = tape.mse(ub, zero)?;
        let lap = model.tape_laplacian(tape, vars, xi)?;
        let residual = tape.mse(lap, rhs)?;
        tape.add(boundary, residual)
    }

    fn evaluate(&mut self, model: &M, _running: Option<f64>) -> Result<Evaluation> {
        let (b, r) = losses_on(model, &self.eval_boundary, &self.eval_interior)?;
        let l2 = l2_error(model, self.cfg.grid)?;
        Ok(Evaluation {
            train_loss: b + r,
            test_loss: l2,
            extras: vec![
                ("l2_error".to_string(), l2),
                ("boundary_mse".to_string(), b),
                ("residual_mse".to_string(), r),
            ],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmnm::{GmnmConfig, Mode};
    use crate::nets::Activation;

    fn trained_like_gmnm(seed: u64) -> GmnmParams {
        let mut rng = Rng::seed(seed);
        let mut p = GmnmParams::init(GmnmConfig::minimal_ridge(2, 12, 1), &mut rng, None).unwrap();
        p.pi = rng.uniform([1, 12], -1.0, 1.0).unwrap();
        p
    }

    #[test]
    fn sin_pi_matches_std_and_vanishes_at_integers() {
        for k in -3..=3 {
            assert_eq!(sin_pi(k as f64), 0.0);
        }
        let mut rng = Rng::seed(2);
        for _ in 0..1000 {
            let x = rng.uniform_scalar(-3.0, 3.0);
            assert!((sin_pi(x) - (PI * x).sin()).abs() < 1e-14);
        }
        assert_eq!(sin_pi(0.5), 1.0);
        assert_eq!(sin_pi(-0.5), -1.0);
    }

    #[test]
    fn exact_solution_has_zero_losses() {
        let (b, r) = pde_losses(&ExactSolution, &PdeConfig::default(), &mut Rng::seed(3)).unwrap();
        assert_eq!(b, 0.0);
        assert!(r < 1e-20, "{r}");
    }

    #[test]
    fn zero_model_residual_matches_integrand_mean() {
        let cfg = PdeConfig {
            n_interior: 200_000,
            ..PdeConfig::default()
        };
        let (b, r) = pde_losses(&ZeroField, &cfg, &mut Rng::seed(4)).unwrap();
        assert_eq!(b, 0.0);
        let expected = (2.0 * PI * PI).powi(2) / 4.0;
        assert!((expected - 97.41).abs() < 0.01);
        assert!((r - expected).abs() < 1.0, "{r}");
    }

    #[test]
    fn l2_grid_oracles() {
        let zero = l2_error(&ZeroField, 101).unwrap();
        assert!((zero - 0.5).abs() < 1e-3, "{zero}");
        assert!((l2_error(&ZeroField, 64).unwrap() - 0.5).abs() < 1e-3);
        assert_eq!(l2_error(&ExactSolution, 101).unwrap(), 0.0);
        let p = trained_like_gmnm(5);
        assert_eq!(l2_error(&p, 1).unwrap(), p.value(&[0.0, 0.0]).unwrap().abs());
        assert!(l2_error(&ZeroField, 0).is_err());
    }

    #[test]
    fn boundary_points_lie_on_the_perimeter() {
        let pts = boundary_points(500, &mut Rng::seed(6)).unwrap();
        for i in 0..500 {
            let r = pts.row(i);
            assert!(r.iter().all(|v| v.abs() <= 1.0));
            assert!(r.iter().any(|v| v.abs() == 1.0));
        }
    }

    fn check_tape_against_pointwise<M: PoissonModel>(model: &M) {
        let x = interior_points(7, &mut Rng::seed(8)).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let v = model.tape_value(&mut tape, &bound.vars, xv).unwrap();
        let l = model.tape_laplacian(&mut tape, &bound.vars, xv).unwrap();
        for i in 0..7 {
            let pv = model.value(x.row(i)).unwrap();
            let pl = model.laplacian(x.row(i)).unwrap();
            assert!((tape.value(v).data()[i] - pv).abs() < 1e-12);
            assert!((tape.value(l).data()[i] - pl).abs() < 1e-9 * (1.0 + pl.abs()));
        }
    }

    #[test]
    fn tape_paths_match_pointwise_fields() {
        check_tape_against_pointwise(&trained_like_gmnm(9));
        for act in [Activation::Tanh, Activation::Silu] {
            let mlp = MlpParams::init(&[2, 8, 8, 1], act, &mut Rng::seed(10)).unwrap();
            check_tape_against_pointwise(&mlp);
        }
    }

    #[test]
    fn non_scalar_models_rejected() {
        let mlp = MlpParams::init(&[2, 4, 2], Activation::Tanh, &mut Rng::seed(11)).unwrap();
        assert!(mlp.value(&[0.1, 0.2]).is_err());
        assert!(mlp.laplacian(&[0.1, 0.2]).is_err());
        let q = GmnmParams::init(GmnmConfig::new(2, 3, 1).with_mode(Mode::Quadratic), &mut Rng::seed(12), None).unwrap();
        let mut tape = Tape::new();
        let b = q.bind(&mut tape);
        let x = tape.constant(Tensor::zeros([1, 2]));
        assert!(q.tape_laplacian(&mut tape, &b.vars, x).is_err());
    }

    #[test]
    fn objective_loss_is_boundary_plus_residual() {
        let p = trained_like_gmnm(13);
        let cfg = PdeConfig {
            n_interior: 64,
            n_boundary: 32,
            grid: 11,
        };
        let mut obj = PoissonObjective::new(cfg.clone(), 14).unwrap();
        let mut replay = Rng::fork(14, 0x636f_6c);
        let interior = interior_points(cfg.n_interior, &mut replay).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = Objective::<GmnmParams>::loss(&mut obj, &p, &mut tape, &bound.vars, &[0]).unwrap();
        let (b, r) = losses_on(&p, &obj.boundary, &interior).unwrap();
        let got = tape.value(loss).data()[0];
        assert!((got - (b + r)).abs() < 1e-10 * (1.0 + got), "{got} vs {}", b + r);
    }
}
