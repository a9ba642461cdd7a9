use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Optimizer;
use crate::engine::{Rng, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::module::Module;

/// How long to train and how often to evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainBudget {
    /// Total optimizer steps; zero records only the initial evaluation.
    pub steps: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// Evaluate every this many steps (and always after the last step).
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainBudget {
    pub fn full_batch(steps: usize, eval_every: usize, seed: u64) -> Self {
        TrainBudget {
            steps,
            batch_size: None,
            eval_every,
            seed,
        }
    }

    /// Mini-batch training for whole epochs over `n_train` rows, evaluating
    /// once per epoch.
    pub fn epochs(epochs: usize, n_train: usize, batch_size: usize, seed: u64) -> Self {
        let per_epoch = n_train.div_ceil(batch_size.max(1)).max(1);
        TrainBudget {
            steps: epochs * per_epoch,
            batch_size: Some(batch_size),
            eval_every: per_epoch,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Losses reported by an evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub train_loss: f64,
    pub test_loss: f64,
    /// Task-specific series, e.g. `l2_error`; names must be stable per run.
    pub extras: Vec<(String, f64)>,
}

/// A task as seen by the training loop.
pub trait Objective<M: Module> {
    /// Number of rows mini-batches are drawn from; 1 for full-batch tasks
    /// that sample their own points.
    fn train_len(&self) -> usize;

    /// Scalar training loss for the rows in `batch`.
    fn loss(&mut self, model: &M, tape: &mut Tape, vars: &M::Vars, batch: &[usize]) -> Result<Var>;

    /// `running_train` is the mean batch loss since the previous evaluation,
    /// when any steps were taken.
    fn evaluate(&mut self, model: &M, running_train: Option<f64>) -> Result<Evaluation>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub extras: Vec<(String, f64)>,
}

/// Per-evaluation metrics plus run totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
    pub param_count: usize,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn min_train_loss(&self) -> f64 {
        self.rows.iter().map(|r| r.train_loss).fold(f64::INFINITY, f64::min)
    }

    pub fn min_test_loss(&self) -> f64 {
        self.rows.iter().map(|r| r.test_loss).fold(f64::INFINITY, f64::min)
    }

    pub fn final_row(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// Minimum of a named extra series, if recorded.
    pub fn min_extra(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.extras.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
            .reduce(f64::min)
    }

    pub fn extra_names(&self) -> Vec<String> {
        self.rows
            .first()
            .map(|r| r.extras.iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default()
    }
}

fn nan_at(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NanAbort { step },
        other => other,
    }
}

fn checked_eval(eval: Evaluation, step: usize) -> Result<Evaluation> {
    let finite = eval.train_loss.is_finite() && eval.test_loss.is_finite() && eval.extras.iter().all(|(_, v)| v.is_finite());
    if finite {
        Ok(eval)
    } else {
        Err(Error::NanAbort { step })
    }
}

/// Wall clock, absent on targets that lack one (browser wasm).
fn clock() -> Option<Instant> {
    if cfg!(all(target_arch = "wasm32", target_os = "unknown")) {
        None
    } else {
        Some(Instant::now())
    }
}

fn frozen_bits<M: Module>(model: &M) -> Vec<(String, Vec<u64>)> {
    model
        .params()
        .into_iter()
        .filter(|p| !p.trainable)
        .map(|p| (p.name, p.value.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Runs `budget.steps` optimizer steps and records evaluations at step 0,
/// every `eval_every` steps and at the end. Fails if a frozen tensor changes.
pub fn train<M, O, P>(model: &mut M, objective: &mut O, optimizer: &mut P, budget: &TrainBudget) -> Result<RunRecord>
where
    M: Module,
    O: Objective<M>,
    P: Optimizer,
{
    budget.validate()?;
    let start = clock();
    let frozen_before = frozen_bits(model);
    let trainable: Vec<bool> = model.params().iter().map(|p| p.trainable).collect();
    let n = objective.train_len();
    if n == 0 {
        return Err(invalid("objective has no training rows"));
    }
    let mut rng = Rng::fork(budget.seed, 0x7261_696e);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let mut rows = Vec::new();
    let first = checked_eval(objective.evaluate(model, None).map_err(nan_at(0))?, 0)?;
    rows.push(MetricRow {
        step: 0,
        train_loss: first.train_loss,
        test_loss: first.test_loss,
        extras: first.extras,
    });

    let (mut running, mut running_count) = (0.0, 0usize);
    for step in 1..=budget.steps {
        let batch: Vec<usize> = match budget.batch_size {
            None => order.clone(),
            Some(bs) => {
                if cursor >= n {
                    rng.shuffle(&mut order);
                    cursor = 0;
                }
                let end = (cursor + bs).min(n);
                let b = order[cursor..end].to_vec();
                cursor = end;
                b
            }
        };

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let loss = objective.loss(model, &mut tape, &bound.vars, &batch).map_err(nan_at(step))?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NanAbort { step });
        }
        let mut grads = tape.backward(loss).map_err(nan_at(step))?;
        let grads: Vec<_> = bound.leaves.iter().map(|&v| grads.take(v)).collect();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NanAbort { step });
        }
        optimizer.step(model.params_mut(), &trainable, &grads)?;
        running += value;
        running_count += 1;

        if step % budget.eval_every == 0 || step == budget.steps {
            let mean = running / running_count as f64;
            let eval = checked_eval(objective.evaluate(model, Some(mean)).map_err(nan_at(step))?, step)?;
            rows.push(MetricRow {
                step,
                train_loss: eval.train_loss,
                test_loss: eval.test_loss,
                extras: eval.extras,
            });
            running = 0.0;
            running_count = 0;
        }
    }

    for ((name, before), (_, after)) in frozen_before.iter().zip(frozen_bits(model)) {
        if *before != after {
            return Err(Error::FrozenModified(name.clone()));
        }
    }
    Ok(RunRecord {
        rows,
        param_count: model.param_count(),
        wall_time_secs: start.map_or(0.0, |t| t.elapsed().as_secs_f64()),
    })
}
