//! Supervised regression and classification objectives.

use super::{gather_rows, Dataset};
use crate::engine::{Tape, Tensor, Var};
use crate::error::{invalid, Result};
use crate::gmnm::GmnmParams;
use crate::module::Module;
use crate::nets::{accuracy, labels_of, loss, tape_loss, ConvStackParams, LossKind, LstmParams, MlpParams, RbfParams};
use crate::optim::{Evaluation, Objective};

/// A model mapping a batch of inputs (leading axis = batch) to `[batch × out]`.
pub trait Predictor: Module {
    fn predict(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var>;

    /// Forward pass without gradients, in chunks of `chunk` rows.
    fn predict_all(&self, inputs: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = super::rows(inputs);
        let mut data = Vec::new();
        let mut width = 0;
        for start in (0..n).step_by(chunk.max(1)) {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let x = tape.constant(gather_rows(inputs, &idx)?);
            let out = self.predict(&mut tape, &bound.vars, x)?;
            let value = tape.value(out);
            width = value.shape()[1];
            data.extend_from_slice(value.data());
        }
        Tensor::matrix(n, width, data)
    }
}

impl Predictor for GmnmParams {
    fn predict(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
}

impl Predictor for MlpParams {
    fn predict(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
}

impl Predictor for RbfParams {
    fn predict(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
}

impl Predictor for ConvStackParams {
    fn predict(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
}

impl Predictor for LstmParams {
    fn predict(&self, tape: &mut Tape, vars: &Self::Vars, x: Var) -> Result<Var> {
        vars.forward(tape, x)
    }
}

/// Mean-squared loss against fixed targets.
///
/// Evaluation reports the loss over the whole train and test partitions;
/// classification tasks add `test_accuracy`.
pub struct SupervisedObjective {
    kind: LossKind,
    train_x: Tensor,
    train_y: Tensor,
    test_x: Tensor,
    test_y: Tensor,
    eval_chunk: usize,
}

impl SupervisedObjective {
    pub fn new(kind: LossKind, train: (Tensor, Tensor), test: (Tensor, Tensor)) -> Result<Self> {
        for (x, y) in [&train, &test] {
            if super::rows(x) != super::rows(y) {
                return Err(invalid("inputs and targets disagree on row count"));
            }
        }
        if super::rows(&train.0) == 0 {
            return Err(invalid("empty training set"));
        }
        Ok(SupervisedObjective {
            kind,
            train_x: train.0,
            train_y: train.1,
            test_x: test.0,
            test_y: test.1,
            eval_chunk: 1000,
        })
    }

    pub fn from_dataset(kind: LossKind, data: &Dataset) -> Result<Self> {
        Self::new(
            kind,
            (data.train_inputs()?, data.train_targets()?),
            (data.test_inputs()?, data.test_targets()?),
        )
    }

    fn split_loss<M: Predictor>(&self, model: &M, x: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
        let pred = model.predict_all(x, self.eval_chunk)?;
        Ok((loss(self.kind, &pred, y)?, pred))
    }
}

impl<M: Predictor> Objective<M> for SupervisedObjective {
    fn train_len(&self) -> usize {
        super::rows(&self.train_x)
    }

    fn loss(&mut self, model: &M, tape: &mut Tape, vars: &M::Vars, batch: &[usize]) -> Result<Var> {
        let x = tape.constant(gather_rows(&self.train_x, batch)?);
        let y = gather_rows(&self.train_y, batch)?;
        let pred = model.predict(tape, vars, x)?;
        tape_loss(self.kind, tape, pred, &y)
    }

    fn evaluate(&mut self, model: &M, _running: Option<f64>) -> Result<Evaluation> {
        let (train_loss, _) = self.split_loss(model, &self.train_x, &self.train_y)?;
        let (test_loss, pred) = self.split_loss(model, &self.test_x, &self.test_y)?;
        let mut extras = Vec::new();
        if self.kind == LossKind::MseOnehot {
            extras.push(("test_accuracy".to_string(), accuracy(&pred, &labels_of(&self.test_y)?)));
        }
        Ok(Evaluation {
            train_loss,
            test_loss,
            extras,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Rng;
    use crate::gmnm::GmnmConfig;
    use crate::nets::Activation;

    #[test]
    fn chunked_prediction_matches_single_pass() {
        let mlp = MlpParams::init(&[3, 5, 2], Activation::Tanh, &mut Rng::seed(1)).unwrap();
        let x = Rng::seed(2).uniform([17, 3], -1.0, 1.0).unwrap();
        let whole = mlp.predict_all(&x, 100).unwrap();
        let chunked = mlp.predict_all(&x, 4).unwrap();
        assert_eq!(whole, chunked);
        for r in 0..17 {
            assert_eq!(whole.row(r), mlp.forward(x.row(r)).unwrap().as_slice());
        }
    }

    #[test]
    fn zero_targets_give_zero_initial_loss() {
        let g = GmnmParams::init(GmnmConfig::new(2, 4, 1), &mut Rng::seed(3), None).unwrap();
        let x = Rng::seed(4).uniform([10, 2], -1.0, 1.0).unwrap();
        let y = Tensor::zeros([10, 1]);
        let mut obj = SupervisedObjective::new(LossKind::Mse, (x.clone(), y.clone()), (x, y)).unwrap();
        let e = obj.evaluate(&g, None).unwrap();
        assert_eq!((e.train_loss, e.test_loss), (0.0, 0.0));
    }

    #[test]
    fn classification_reports_accuracy() {
        let mlp = MlpParams::init(&[2, 3], Activation::Tanh, &mut Rng::seed(5)).unwrap();
        let x = Rng::seed(6).uniform([6, 2], -1.0, 1.0).unwrap();
        let y = Tensor::vector(vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
        let mut obj = SupervisedObjective::new(LossKind::MseOnehot, (x.clone(), y.clone()), (x, y)).unwrap();
        let e = Objective::<MlpParams>::evaluate(&mut obj, &mlp, None).unwrap();
        assert_eq!(e.extras[0].0, "test_accuracy");
        assert!((0.0..=1.0).contains(&e.extras[0].1));
    }

    #[test]
    fn mismatched_rows_rejected() {
        let x = Tensor::zeros([3, 2]);
        let y = Tensor::zeros([2, 1]);
        assert!(SupervisedObjective::new(LossKind::Mse, (x.clone(), y.clone()), (x, y)).is_err());
    }
}
