//! Central finite differences, used as an independent oracle for the tape
//! and the hyper-dual path.

use super::Tensor;

/// Relative step for first derivatives.
pub const GRAD_STEP: f64 = 1e-5;
/// Absolute step for second derivatives.
pub const SECOND_STEP: f64 = 1e-4;

/// Below this magnitude a gradient entry is compared in absolute terms.
pub const SMALL_GRADIENT: f64 = 1e-6;

/// Numerical gradient of `f` at `x` by central differences with
/// `h = 1e-5·max(1, |x_i|)`.
pub fn finite_diff_gradient(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        let h = GRAD_STEP * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (up - down) / (2.0 * h);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// Second derivative of `f` along axis `k` by the three-point stencil with
/// `h = 1e-4`.
pub fn finite_diff_second(x: &[f64], k: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = x.to_vec();
    let center = f(&p);
    p[k] = x[k] + SECOND_STEP;
    let up = f(&p);
    p[k] = x[k] - SECOND_STEP;
    let down = f(&p);
    (up - 2.0 * center + down) / (SECOND_STEP * SECOND_STEP)
}

/// Worst-case disagreement between an analytic and a numerical gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradDiff {
    /// Max relative error over entries with magnitude ≥ [`SMALL_GRADIENT`].
    pub rel: f64,
    /// Max absolute error over the remaining near-zero entries.
    pub abs_small: f64,
}

impl GradDiff {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.rel < rel_tol && self.abs_small < abs_tol
    }

    pub fn merge(self, other: GradDiff) -> GradDiff {
        GradDiff {
            rel: self.rel.max(other.rel),
            abs_small: self.abs_small.max(other.abs_small),
        }
    }
}

pub fn compare_gradients(analytic: &Tensor, numeric: &Tensor) -> GradDiff {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let mut diff = GradDiff::default();
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let scale = a.abs().max(n.abs());
        let err = (a - n).abs();
        if scale < SMALL_GRADIENT {
            diff.abs_small = diff.abs_small.max(err);
        } else {
            diff.rel = diff.rel.max(err / scale);
        }
    }
    diff
}

/// Single-number summary: relative error, with near-zero entries mapped so
/// that the absolute tolerance 1e-8 lands on 1e-5.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let d = compare_gradients(analytic, numeric);
    d.rel.max(d.abs_small * 1e3)
}
