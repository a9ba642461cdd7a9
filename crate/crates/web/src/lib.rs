//! Browser demo: fit a GMNM to the 2D target family step by step, and probe
//! one quadratic-mode AGP built from a 2×2 precision matrix.
//!
//! The logic lives in plain methods (`*_impl`, [`FitDemo::advance`]) so it is
//! testable off the browser; the `wasm_bindgen` surface only converts errors.

use gmnm::engine::{Rng, Tensor};
use gmnm::gmnm::{mahalanobis_embed, GmnmConfig, GmnmParams};
use gmnm::module::Module;
use gmnm::nets::LossKind;
use gmnm::optim::{train, Adam, Objective, TrainBudget};
use gmnm::tasks::fit::{sample_fit_dataset, target_2d, FitLevel, FIT_DOMAIN};
use gmnm::tasks::SupervisedObjective;
use wasm_bindgen::prelude::*;

fn js(e: gmnm::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Row-major `res × res` cell centres of the fitting box, `y` varying slowest.
pub fn grid_points(res: usize) -> Vec<[f64; 2]> {
    let (lo, hi) = FIT_DOMAIN;
    let at = |i: usize| lo + (hi - lo) * (i as f64 + 0.5) / res as f64;
    (0..res).flat_map(|r| (0..res).map(move |c| [at(c), at(r)])).collect()
}

#[wasm_bindgen]
pub struct FitDemo {
    model: GmnmParams,
    objective: SupervisedObjective,
    optimizer: Adam,
    level: FitLevel,
    steps: usize,
    test_mse: f64,
}

impl FitDemo {
    pub fn create(level: usize, m: usize, seed: u64) -> gmnm::Result<FitDemo> {
        let level = *FitLevel::STANDARD
            .get(level)
            .ok_or_else(|| gmnm::Error::InvalidArgument(format!("level {level} out of range 0..4")))?;
        let mut rng = Rng::seed(seed);
        let data = sample_fit_dataset(level, 400, 200, &mut rng, seed)?;
        let cfg = GmnmConfig::new(2, m, 1).with_domain(FIT_DOMAIN.0, FIT_DOMAIN.1);
        let model = GmnmParams::init(cfg, &mut rng, None)?;
        let mut objective = SupervisedObjective::from_dataset(LossKind::Mse, &data)?;
        let test_mse = objective.evaluate(&model, None)?.test_loss;
        Ok(FitDemo {
            model,
            objective,
            optimizer: Adam::new(1e-2),
            level,
            steps: 0,
            test_mse,
        })
    }

    /// Runs `n` full-batch Adam steps and returns the test MSE.
    pub fn advance(&mut self, n: usize) -> gmnm::Result<f64> {
        if n > 0 {
            let budget = TrainBudget::full_batch(n, n, self.steps as u64);
            let rec = train(&mut self.model, &mut self.objective, &mut self.optimizer, &budget)?;
            self.steps += n;
            self.test_mse = rec.final_row().map_or(self.test_mse, |r| r.test_loss);
        }
        Ok(self.test_mse)
    }

    pub fn model_values(&self, res: usize) -> gmnm::Result<Vec<f64>> {
        grid_points(res).iter().map(|p| Ok(self.model.forward(p)?[0])).collect()
    }

    pub fn target_values(&self, res: usize) -> gmnm::Result<Vec<f64>> {
        grid_points(res).iter().map(|p| target_2d(p, self.level)).collect()
    }
}

#[wasm_bindgen]
impl FitDemo {
    /// `level` indexes the four standard complexity levels.
    #[wasm_bindgen(constructor)]
    pub fn new(level: usize, m: usize, seed: u32) -> Result<FitDemo, JsError> {
        FitDemo::create(level, m, u64::from(seed)).map_err(js)
    }

    pub fn step(&mut self, n: usize) -> Result<f64, JsError> {
        self.advance(n).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[wasm_bindgen(getter, js_name = paramCount)]
    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    #[wasm_bindgen(getter, js_name = testMse)]
    pub fn test_mse(&self) -> f64 {
        self.test_mse
    }

    #[wasm_bindgen(js_name = modelGrid)]
    pub fn model_grid(&self, res: usize) -> Result<Vec<f64>, JsError> {
        self.model_values(res).map_err(js)
    }

    #[wasm_bindgen(js_name = targetGrid)]
    pub fn target_grid(&self, res: usize) -> Result<Vec<f64>, JsError> {
        self.target_values(res).map_err(js)
    }
}

/// AGP response over the fitting box for precision `[[p11, p12], [p12, p22]]`,
/// alongside the largest deviation from `exp(−zᵀPz/2)` on the same grid.
pub fn agp_grid_impl(p11: f64, p12: f64, p22: f64, res: usize) -> gmnm::Result<(Vec<f64>, f64)> {
    let p = Tensor::matrix(2, 2, vec![p11, p12, p12, p22])?;
    let agp = mahalanobis_embed(&p)?;
    let mut values = Vec::with_capacity(res * res);
    let mut worst: f64 = 0.0;
    for z in grid_points(res) {
        let v = agp.forward(&z)?[0];
        let q = p11 * z[0] * z[0] + 2.0 * p12 * z[0] * z[1] + p22 * z[1] * z[1];
        worst = worst.max((v - (-0.5 * q).exp()).abs());
        values.push(v);
    }
    Ok((values, worst))
}

/// Grid of AGP values with the max deviation appended as the last entry.
#[wasm_bindgen(js_name = agpGrid)]
pub fn agp_grid(p11: f64, p12: f64, p22: f64, res: usize) -> Result<Vec<f64>, JsError> {
    let (mut v, worst) = agp_grid_impl(p11, p12, p22, res).map_err(js)?;
    v.push(worst);
    Ok(v)
}
