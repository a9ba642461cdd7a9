use serde::{Deserialize, Serialize};

use crate::engine::{Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// Integer labels expanded to one-hot rows before the MSE.
    MseOnehot,
}

/// `[labels × classes]` indicator matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(invalid(format!("label {l} out of range for {classes} classes")));
        }
        data[r * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

fn check_shapes(pred: &[usize], target: &[usize]) -> Result<()> {
    if pred != target {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: pred.to_vec(),
            rhs: target.to_vec(),
        });
    }
    Ok(())
}

/// Mean squared difference. For [`LossKind::MseOnehot`] `target` holds one
/// integer label per row of `pred`.
pub fn loss(kind: LossKind, pred: &Tensor, target: &Tensor) -> Result<f64> {
    let target = expand_target(kind, pred.shape(), target)?;
    check_shapes(pred.shape(), target.shape())?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// [`loss`] on the tape; `target` is a constant.
pub fn tape_loss(kind: LossKind, tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    let target = expand_target(kind, &shape, target)?;
    check_shapes(&shape, target.shape())?;
    let t = tape.constant(target);
    tape.mse(pred, t)
}

fn expand_target(kind: LossKind, pred_shape: &[usize], target: &Tensor) -> Result<Tensor> {
    match kind {
        LossKind::Mse => Ok(target.clone()),
        LossKind::MseOnehot => {
            if pred_shape.len() != 2 {
                return Err(invalid("one-hot loss needs [batch × classes] predictions"));
            }
            let labels = labels_of(target)?;
            one_hot(&labels, pred_shape[1])
        }
    }
}

/// Integer labels stored as floats.
pub fn labels_of(target: &Tensor) -> Result<Vec<usize>> {
    target
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid(format!("{v} is not a class label")))
            }
        })
        .collect()
}

/// Fraction of rows whose arg-max matches the label.
pub fn accuracy(pred: &Tensor, labels: &[usize]) -> f64 {
    let (rows, cols) = pred.dims2();
    let hits = (0..rows)
        .filter(|&r| {
            let row = pred.row(r);
            let best = (0..cols).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            best == labels[r]
        })
        .count();
    hits as f64 / rows as f64
}
