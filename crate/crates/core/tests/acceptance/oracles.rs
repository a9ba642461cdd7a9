//! Criteria checked against independent oracles: finite differences,
//! hyper-dual numbers, direct quadratic forms and exact invariants.

use std::time::Instant;

use gmnm::engine::{hyperdual_d2, HyperDual, Rng, Tensor};
use gmnm::experiment::{run_experiment, ExperimentConfig};
use gmnm::gmnm::{mahalanobis_embed, GmnmConfig, GmnmParams, Mode};
use gmnm::gradcheck::{gradcheck, ModelKind, ABS_TOL, REL_TOL};
use gmnm::module::Module;
use gmnm::nets::{rbf_to_gmnm, RbfParams};
use gmnm::optim::{train, Adam, TrainBudget};
use gmnm::tasks::pde::{l2_error, pde_losses, ExactSolution, PdeConfig, ZeroField};
use gmnm::tasks::SupervisedObjective;

use crate::Verdict;

pub fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut failures = Vec::new();
    for kind in ModelKind::ALL {
        for seed in 0..20 {
            match gradcheck(kind, seed) {
                Ok(blocks) => {
                    for b in blocks {
                        if let Some(d) = b.diff {
                            worst_rel = worst_rel.max(d.rel);
                            worst_abs = worst_abs.max(d.abs_small);
                            if !d.passes(REL_TOL, ABS_TOL) {
                                failures.push(format!("{kind}/{seed}/{}", b.name));
                            }
                        }
                    }
                }
                Err(e) => failures.push(format!("{kind}/{seed}: {e}")),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        failures.is_empty() && secs < 60.0,
        format!("6 kinds x 20 seeds, max rel {worst_rel:.2e}, max abs(small) {worst_abs:.2e}, {secs:.1}s, failures {failures:?}"),
    )
}

/// `B Bᵀ` with `B` of shape `d × rank`: symmetric PSD of the given rank.
fn random_psd(rng: &mut Rng, d: usize, rank: usize) -> Tensor {
    let b = rng.uniform([d, rank], -1.0, 1.0).unwrap();
    b.matmul(&b.transpose()).unwrap()
}

fn quadratic_form(p: &Tensor, z: &[f64]) -> f64 {
    let d = z.len();
    (0..d).map(|i| (0..d).map(|j| z[i] * p.get(&[i, j]) * z[j]).sum::<f64>()).sum()
}

pub fn mahalanobis() -> Verdict {
    let mut rng = Rng::seed(0x6d61_6861);
    let (mut worst_y, mut worst_f): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let d = 1 + rng.below(8);
        let rank = 1 + rng.below(d);
        let p = random_psd(&mut rng, d, rank);
        let agp = match mahalanobis_embed(&p) {
            Ok(a) => a,
            Err(e) => return Verdict::new(false, format!("embedding failed: {e}")),
        };
        for _ in 0..100 {
            let z = rng.uniform([d], -2.0, 2.0).unwrap();
            let q = quadratic_form(&p, z.data());
            worst_y = worst_y.max((agp.agp_projection(0, z.data()).unwrap() - q).abs());
            worst_f = worst_f.max((agp.forward(z.data()).unwrap()[0] - (-0.5 * q).exp()).abs());
        }
    }
    Verdict::new(
        worst_y < 1e-10 && worst_f < 1e-12,
        format!("100 P x 100 z, max |y - zPz| {worst_y:.2e}, max |G - exp(-zPz/2)| {worst_f:.2e}"),
    )
}

/// Every tensor of a fresh layer perturbed so no block is at its initial value.
fn random_gmnm(rng: &mut Rng, config: GmnmConfig) -> GmnmParams {
    let mut p = GmnmParams::init(config, rng, None).unwrap();
    for t in p.params_mut() {
        let noise = rng.uniform(t.shape().to_vec(), -0.8, 0.8).unwrap();
        *t = t.add(&noise).unwrap();
    }
    p
}

pub fn analytic_derivatives() -> Verdict {
    let mut rng = Rng::seed(0x6465_7269);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = 1 + rng.below(4);
        let (m, out, n) = (1 + rng.below(6), 1 + rng.below(2), 1 + rng.below(3));
        let config = GmnmConfig::new(d, m, out).with_projections(n);
        let p = random_gmnm(&mut rng, config);
        let x = rng.uniform([d], -1.5, 1.5).unwrap();
        let grad = p.input_gradient(x.data()).unwrap();
        let lap = p.input_laplacian(x.data()).unwrap();
        for k in 0..p.config.out_dim {
            let mut hd_lap = 0.0;
            for j in 0..d {
                let (_, d1, d2) = hyperdual_d2(|v: &[HyperDual]| Ok(p.forward_with(v)[k]), x.data(), j).unwrap();
                worst = worst.max(rel_err(grad.get(&[k, j]), d1));
                hd_lap += d2;
            }
            worst = worst.max(rel_err(lap.data()[k], hd_lap));
        }
    }
    Verdict::new(
        worst < 1e-8,
        format!("50 configs, max relative deviation from hyper-dual {worst:.2e}"),
    )
}

/// Relative error with a floor so exact zeros compare absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

pub fn invariants() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut rng = Rng::seed(0x696e_7661);

    // AGP range and output bound, both modes.
    let (mut range_ok, mut bound_ok) = (true, true);
    for trial in 0..200 {
        let mode = if trial % 2 == 0 { Mode::Ridge } else { Mode::Quadratic };
        let d = 1 + rng.below(4);
        let (m, out) = (1 + rng.below(5), 1 + rng.below(3));
        let p = random_gmnm(&mut rng, GmnmConfig::new(d, m, out).with_mode(mode));
        for _ in 0..20 {
            let x = rng.uniform([d], -3.0, 3.0).unwrap();
            for i in 0..p.config.m {
                let f = p.agp_forward(i, x.data()).unwrap();
                range_ok &= f > 0.0 && f <= 1.0;
            }
            let m = p.config.m;
            for (k, g) in p.forward(x.data()).unwrap().iter().enumerate() {
                let mass: f64 = p.pi.data()[k * m..(k + 1) * m].iter().map(|v| v.abs()).sum();
                bound_ok &= g.abs() <= mass;
            }
        }
    }
    notes.push(format!("range {range_ok}, bound {bound_ok}"));
    pass &= range_ok && bound_ok;

    // Translation equivariance on dyadic values, where it is exact.
    let dyadic = |rng: &mut Rng| (rng.below(1024) as f64 - 512.0) / 64.0;
    let mut equivariant = true;
    for _ in 0..200 {
        let mut p = random_gmnm(&mut rng, GmnmConfig::new(2, 3, 2));
        p.mu = Tensor::matrix(3, 2, (0..6).map(|_| dyadic(&mut rng)).collect()).unwrap();
        let delta = [dyadic(&mut rng), dyadic(&mut rng)];
        let x = [dyadic(&mut rng), dyadic(&mut rng)];
        let mut shifted = p.clone();
        shifted.mu = Tensor::matrix(3, 2, p.mu.data().iter().enumerate().map(|(j, v)| v + delta[j % 2]).collect()).unwrap();
        equivariant &= p.forward(&x).unwrap() == shifted.forward(&[x[0] + delta[0], x[1] + delta[1]]).unwrap();
    }
    notes.push(format!("translation {equivariant}"));
    pass &= equivariant;

    // Collapsed ridge vs staged evaluation. Projection weights stay at their
    // initial scale: reassociation error grows with |y|, so the ulp bound is a
    // statement about initialization-scale parameters.
    let mut worst_collapse: f64 = 0.0;
    for _ in 0..100 {
        let mut p = GmnmParams::init(GmnmConfig::new(3, 4, 1).with_projections(3), &mut rng, None).unwrap();
        p.b = rng.uniform([4, 3], -0.5, 0.5).unwrap();
        p.alpha_raw = rng.uniform([4, 3], -1.0, 1.0).unwrap();
        p.beta_raw = rng.uniform([4], -0.5, 0.5).unwrap();
        let x = rng.uniform([3], -2.0, 2.0).unwrap();
        for i in 0..4 {
            let col = p.collapse_ridge(i).unwrap();
            let y = (0..3).fold(col.c, |acc, k| acc + col.w.data()[k] * (x.data()[k] - p.mu.row(i)[k]));
            worst_collapse = worst_collapse.max(((-0.5 * y * y).exp() - p.agp_forward(i, x.data()).unwrap()).abs());
        }
    }
    let collapse_ok = worst_collapse <= 4.0 * f64::EPSILON;
    notes.push(format!("collapse {worst_collapse:.1e}"));
    pass &= collapse_ok;

    // Frozen centres survive training bit for bit.
    let mut p = GmnmParams::init(GmnmConfig::new(2, 8, 1).with_trainable_mu(false), &mut rng, None).unwrap();
    let before: Vec<u64> = p.mu.data().iter().map(|v| v.to_bits()).collect();
    let x = rng.uniform([50, 2], -1.0, 1.0).unwrap();
    let y = x.map(f64::sin).unwrap().reshape([100]).unwrap();
    let y = Tensor::matrix(50, 1, y.data().iter().step_by(2).copied().collect()).unwrap();
    let mut obj = SupervisedObjective::new(gmnm::nets::LossKind::Mse, (x.clone(), y.clone()), (x, y)).unwrap();
    let frozen_ok = train(&mut p, &mut obj, &mut Adam::new(1e-2), &TrainBudget::full_batch(100, 50, 0)).is_ok()
        && p.mu.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>() == before;
    notes.push(format!("mu frozen {frozen_ok}"));
    pass &= frozen_ok;

    // RBF networks are quadratic-mode GMNMs.
    let mut worst_rbf: f64 = 0.0;
    for _ in 0..50 {
        let mut rbf = RbfParams::init(2, 6, 2, (-1.0, 1.0), &mut rng).unwrap();
        rbf.weights = rng.uniform(rbf.weights.shape().to_vec(), -1.0, 1.0).unwrap();
        let g = rbf_to_gmnm(&rbf).unwrap();
        for _ in 0..100 {
            let x = rng.uniform([2], -2.0, 2.0).unwrap();
            let (a, b) = (rbf.forward(x.data()).unwrap(), g.forward(x.data()).unwrap());
            worst_rbf = a.iter().zip(&b).fold(worst_rbf, |w, (u, v)| w.max((u - v).abs()));
        }
    }
    notes.push(format!("rbf {worst_rbf:.1e}"));
    pass &= worst_rbf < 1e-12;

    // Same config, same bytes.
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "name = \"det\"\ntask = \"fit2d\"\nseed = 5\noutput_dir = {:?}\n[model]\nkind = \"gmnm\"\nm = 16\n[budget]\nsteps = 30\neval_every = 10\n[fit]\na = 5.0\nn_train = 100\nn_test = 40\n",
        tmp.path()
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let read = || std::fs::read(cfg.run_dir().join("metrics.csv")).unwrap();
    run_experiment(&cfg, &text, None).unwrap();
    let first = read();
    run_experiment(&cfg, &text, None).unwrap();
    let deterministic = read() == first;
    notes.push(format!("determinism {deterministic}"));
    pass &= deterministic;

    Verdict::new(pass, notes.join(", "))
}

pub fn exact_solution() -> Verdict {
    let (b, r) = pde_losses(&ExactSolution, &PdeConfig::default(), &mut Rng::seed(9)).unwrap();
    let l2 = l2_error(&ZeroField, 101).unwrap();
    Verdict::new(
        b == 0.0 && r < 1e-20 && (l2 - 0.5).abs() < 1e-3,
        format!("exact losses ({b:e}, {r:.2e}), l2 of zero model {l2:.6}"),
    )
}
