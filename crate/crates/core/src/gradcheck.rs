//! Finite-difference verification of tape gradients for every model kind.

use std::fmt;
use std::str::FromStr;

use crate::engine::{compare_gradients, finite_diff_gradient, GradDiff, Rng, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::gmnm::{GmnmConfig, GmnmParams, Mode, MuInit};
use crate::module::Module;
use crate::nets::{Activation, ConvShape, ConvStackParams, LstmParams, MlpParams, RbfParams};

/// Pass threshold on the relative error of non-small entries.
pub const REL_TOL: f64 = 1e-5;
/// Pass threshold on the absolute error of entries below the small-gradient cutoff.
pub const ABS_TOL: f64 = 1e-8;

/// Comparison for one named parameter tensor; `diff` is `None` when frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub diff: Option<GradDiff>,
}

impl BlockReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.diff.is_none_or(|d| d.passes(rel_tol, abs_tol))
    }
}

impl fmt::Display for BlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.diff {
            None => write!(f, "{:<20} frozen, skipped", self.name),
            Some(d) => write!(f, "{:<20} rel {:.3e}  abs(small) {:.3e}", self.name, d.rel, d.abs_small),
        }
    }
}

/// Compares the tape gradient of `build` with central differences for every
/// trainable tensor of `model`. Frozen tensors must receive zero gradient.
pub fn check_module<M, F>(model: &M, build: F) -> Result<Vec<BlockReport>>
where
    M: Module + Clone,
    F: Fn(&mut Tape, &M::Vars) -> Result<Var>,
{
    let loss_of = |m: &M| -> Result<(f64, Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let root = build(&mut tape, &bound.vars)?;
        let value = tape.value(root).item()?;
        Ok((value, tape, bound.leaves, root))
    };
    let (_, tape, leaves, root) = loss_of(model)?;
    let grads = tape.backward(root)?;

    let mut reports = Vec::new();
    for (idx, info) in model.params().iter().enumerate() {
        let analytic = grads.wrt(leaves[idx]);
        if !info.trainable {
            if analytic.max_abs() != 0.0 {
                return Err(invalid(format!("frozen tensor {} received a gradient", info.name)));
            }
            reports.push(BlockReport {
                name: info.name.clone(),
                diff: None,
            });
            continue;
        }
        let mut failure = None;
        let numeric = finite_diff_gradient(info.value, |t| {
            let mut probe = model.clone();
            *probe.params_mut()[idx] = t.clone();
            match loss_of(&probe) {
                Ok((v, ..)) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        reports.push(BlockReport {
            name: info.name.clone(),
            diff: Some(compare_gradients(&analytic, &numeric)),
        });
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    GmnmRidge,
    GmnmQuadratic,
    Mlp,
    Rbf,
    ConvGmnm,
    LstmGmnm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::GmnmRidge,
        ModelKind::GmnmQuadratic,
        ModelKind::Mlp,
        ModelKind::Rbf,
        ModelKind::ConvGmnm,
        ModelKind::LstmGmnm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GmnmRidge => "gmnm-ridge",
            ModelKind::GmnmQuadratic => "gmnm-quadratic",
            ModelKind::Mlp => "mlp",
            ModelKind::Rbf => "rbf",
            ModelKind::ConvGmnm => "conv-gmnm",
            ModelKind::LstmGmnm => "lstm-gmnm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
            invalid(format!("unsupported model kind {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Adds uniform noise to every tensor so no block sits at a trivial point
/// (zero mixing weights, zero biases).
fn perturb<M: Module>(model: &mut M, rng: &mut Rng, scale: f64) -> Result<()> {
    for t in model.params_mut() {
        let noise = rng.uniform(t.shape().to_vec(), -scale, scale)?;
        *t = t.add(&noise)?;
    }
    Ok(())
}

fn mse_to(tape: &mut Tape, out: Var, target: &Tensor) -> Result<Var> {
    let t = tape.constant(target.clone());
    tape.mse(out, t)
}

/// Builds a small randomized instance of `kind` and checks every block.
pub fn gradcheck(kind: ModelKind, seed: u64) -> Result<Vec<BlockReport>> {
    gradcheck_with(kind, seed, 5)
}

/// As [`gradcheck`], with `steps` unrolled steps for recurrent kinds.
pub fn gradcheck_with(kind: ModelKind, seed: u64, steps: usize) -> Result<Vec<BlockReport>> {
    let mut rng = Rng::seed(seed);
    match kind {
        ModelKind::GmnmRidge | ModelKind::GmnmQuadratic => {
            let mode = if kind == ModelKind::GmnmRidge {
                Mode::Ridge
            } else {
                Mode::Quadratic
            };
            let config = GmnmConfig::new(2, 3, 2).with_mode(mode);
            let mut model = GmnmParams::init(config, &mut rng, None)?;
            perturb(&mut model, &mut rng, 0.5)?;
            // keep t away from the stationary point of β = t²
            model.beta_raw = rng.uniform([3], 0.2, 0.6)?;
            let x = rng.uniform([4, 2], -1.5, 1.5)?;
            let target = rng.uniform([4, 2], -1.0, 1.0)?;
            check_module(&model, |tape, vars| {
                let xv = tape.constant(x.clone());
                let out = vars.forward(tape, xv)?;
                mse_to(tape, out, &target)
            })
        }
        ModelKind::Mlp => {
            let mut model = MlpParams::init(&[2, 5, 5, 1], Activation::Tanh, &mut rng)?;
            perturb(&mut model, &mut rng, 0.3)?;
            let x = rng.uniform([4, 2], -1.0, 1.0)?;
            let target = rng.uniform([4, 1], -1.0, 1.0)?;
            check_module(&model, |tape, vars| {
                let xv = tape.constant(x.clone());
                let out = vars.forward(tape, xv)?;
                mse_to(tape, out, &target)
            })
        }
        ModelKind::Rbf => {
            let mut model = RbfParams::init(2, 4, 2, (-1.0, 1.0), &mut rng)?;
            perturb(&mut model, &mut rng, 0.5)?;
            let x = rng.uniform([4, 2], -1.0, 1.0)?;
            let target = rng.uniform([4, 2], -1.0, 1.0)?;
            check_module(&model, |tape, vars| {
                let xv = tape.constant(x.clone());
                let out = vars.forward(tape, xv)?;
                mse_to(tape, out, &target)
            })
        }
        ModelKind::ConvGmnm => {
            let shape = ConvShape {
                height: 14,
                width: 14,
                in_channels: 1,
                channels: (2, 3),
                classes: 3,
            };
            let images = rng.uniform([4, 14, 14, 1], 0.0, 1.0)?;
            let head = GmnmConfig::new(shape.feature_dim()?, 3, 3)
                .with_projections(2)
                .with_trainable_mu(false)
                .with_mu_init(MuInit::DataSample);
            let mut model = ConvStackParams::init_gmnm(shape, head, Some(&images), &mut rng)?;
            perturb(&mut model, &mut rng, 0.1)?;
            let labels = Tensor::vector(vec![0.0, 2.0, 1.0, 2.0])?;
            check_module(&model, |tape, vars| {
                let xv = tape.constant(images.clone());
                let out = vars.forward(tape, xv)?;
                crate::nets::tape_loss(crate::nets::LossKind::MseOnehot, tape, out, &labels)
            })
        }
        ModelKind::LstmGmnm => {
            let post = GmnmConfig::new(3, 4, 3).with_trainable_mu(false);
            let mut model = LstmParams::init(4, 3, Some(post), &mut rng)?;
            perturb(&mut model, &mut rng, 0.2)?;
            let seq = rng.uniform([2, steps.max(1), 4], -1.0, 1.0)?;
            let target = rng.uniform([2, 1], -1.0, 1.0)?;
            check_module(&model, |tape, vars| {
                let xv = tape.constant(seq.clone());
                let out = vars.forward(tape, xv)?;
                mse_to(tape, out, &target)
            })
        }
    }
}
