//! The two-dimensional target family and its sampled datasets.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::engine::{Rng, Tensor};
use crate::error::{invalid, Error, Result};

/// Complexity levels `(a, b, c)` of the target family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitLevel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FitLevel {
    pub const STANDARD: [FitLevel; 4] = [
        FitLevel { a: 0.0, b: 0.0, c: 0.0 },
        FitLevel { a: 5.0, b: 0.0, c: 0.0 },
        FitLevel { a: 5.0, b: 0.1, c: 0.0 },
        FitLevel { a: 5.0, b: 0.1, c: 40.0 },
    ];

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        FitLevel { a, b, c }
    }
}

/// Sampling box for inputs, per axis.
pub const FIT_DOMAIN: (f64, f64) = (-4.0, 4.0);

/// Covariance of the Gaussian bump, used verbatim although it is not
/// symmetric; the quadratic form only sees its symmetric part.
pub const BUMP_SIGMA: [[f64; 2]; 2] = [[0.6, 2.0], [1.1, 3.9]];

/// Indicator plateau of height 1/1.5 on `[−3.5, −2] × [2, 3]`.
pub fn plateau(x1: f64, x2: f64) -> f64 {
    if (-3.5..=-2.0).contains(&x1) && (2.0..=3.0).contains(&x2) {
        1.0 / 1.5
    } else {
        0.0
    }
}

/// Normalized multivariate Gaussian density with covariance `sigma` (inverse
/// and determinant of the matrix as given).
pub fn gaussian_density(x: &[f64], mu: &[f64], sigma: &Tensor) -> Result<f64> {
    let d = x.len();
    if mu.len() != d || sigma.shape() != [d, d] {
        return Err(Error::ShapeMismatch {
            op: "gaussian_density",
            lhs: vec![d],
            rhs: sigma.shape().to_vec(),
        });
    }
    let s = DMatrix::from_row_slice(d, d, sigma.data());
    let det = s.determinant();
    if det.is_nan() || det <= 1e-300 {
        return Err(Error::Singular);
    }
    let inv = s.try_inverse().ok_or(Error::Singular)?;
    let z = DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
    let q = z.dot(&(&inv * &z));
    Ok((-0.5 * q).exp() / ((2.0 * PI).powf(d as f64 / 2.0) * det.sqrt()))
}

fn bump_sigma() -> Tensor {
    Tensor::matrix(2, 2, BUMP_SIGMA.iter().flatten().copied().collect()).expect("2×2 literal")
}

pub fn target_2d(x: &[f64], level: FitLevel) -> Result<f64> {
    if x.len() != 2 {
        return Err(invalid(format!("target_2d needs a 2-vector, got {}", x.len())));
    }
    let (x1, x2) = (x[0], x[1]);
    let mut v = (PI * x1).sin() * (PI * x2).sin() - level.a * (x1.sinh() + x2.sinh()) + level.b * plateau(x1, x2);
    if level.c != 0.0 {
        v += level.c * gaussian_density(x, &[0.0, 0.0], &bump_sigma())?;
    }
    Ok(v)
}

/// `n_train + n_test` inputs uniform over the fitting box, train rows first.
pub fn sample_fit_dataset(level: FitLevel, n_train: usize, n_test: usize, rng: &mut Rng, seed: u64) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(invalid("fit dataset sizes must be positive"));
    }
    let n = n_train + n_test;
    let inputs = rng.uniform([n, 2], FIT_DOMAIN.0, FIT_DOMAIN.1)?;
    let targets = (0..n).map(|r| target_2d(inputs.row(r), level)).collect::<Result<Vec<_>>>()?;
    Dataset::split_at(inputs, Tensor::matrix(n, 1, targets)?, n_train, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    #[test]
    fn level_zero_at_quarter_point() {
        assert!((target_2d(&[0.5, 0.5], FitLevel::new(0.0, 0.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sinh_level_value() {
        let v = target_2d(&[0.5, 0.5], FitLevel::new(5.0, 0.0, 0.0)).unwrap();
        let expected = 1.0 - 10.0 * 0.5f64.sinh();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - -4.21095).abs() < 1e-5);
    }

    #[test]
    fn plateau_contribution() {
        let x = [-3.0, 2.5];
        let with = target_2d(&x, FitLevel::new(5.0, 0.1, 0.0)).unwrap();
        let without = target_2d(&x, FitLevel::new(5.0, 0.0, 0.0)).unwrap();
        assert!((with - without - 0.1 / 1.5).abs() < 1e-12);
        assert!((0.1 / 1.5 - 0.06667f64).abs() < 1e-5);
        assert_eq!(plateau(-1.0, 2.5), 0.0);
    }

    #[test]
    fn density_modes() {
        let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let v = gaussian_density(&[0.0], &[0.0], &one).unwrap();
        assert!((v - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        let v = gaussian_density(&[0.3, -0.2], &[0.3, -0.2], &Tensor::identity(2)).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let v = gaussian_density(&[0.0, 0.0], &[0.0, 0.0], &bump_sigma()).unwrap();
        let expected = 1.0 / (2.0 * PI * 0.14f64.sqrt());
        assert!((v - expected).abs() < 1e-12);
        // The five-figure reference 0.42537 rounds 0.425359 upward.
        assert!((v - 0.42537).abs() < 2e-5);
    }

    #[test]
    fn nonsymmetric_covariance_is_used_verbatim() {
        // Same determinant is not implied, so compare the exponent only.
        let sym = Tensor::matrix(2, 2, vec![0.6, 1.55, 1.55, 3.9]).unwrap();
        let sigma = bump_sigma();
        let x = [0.7, -0.4];
        let log_ratio = |s: &Tensor| {
            let at_x = gaussian_density(&x, &[0.0, 0.0], s).unwrap();
            let at_0 = gaussian_density(&[0.0, 0.0], &[0.0, 0.0], s).unwrap();
            (at_x / at_0).ln()
        };
        // z·S⁻¹z for the nonsymmetric S equals z·(sym part of S⁻¹)z; check against
        // a direct 2×2 inverse.
        let (a, b, c, d) = (0.6, 2.0, 1.1, 3.9);
        let det = a * d - b * c;
        let inv = [d / det, -b / det, -c / det, a / det];
        let q = x[0] * (inv[0] * x[0] + inv[1] * x[1]) + x[1] * (inv[2] * x[0] + inv[3] * x[1]);
        assert!((log_ratio(&sigma) + 0.5 * q).abs() < 1e-12);
        // The symmetric part is indefinite (det < 0), so it is no density.
        assert!(matches!(gaussian_density(&x, &[0.0, 0.0], &sym), Err(Error::Singular)));
    }

    #[test]
    fn singular_covariance_rejected() {
        let s = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(gaussian_density(&[0.0, 0.0], &[0.0, 0.0], &s), Err(Error::Singular)));
    }

    #[test]
    fn dataset_counts_and_box() {
        let ds = sample_fit_dataset(FitLevel::new(0.0, 0.0, 0.0), 1000, 200, &mut Rng::seed(1), 1).unwrap();
        assert_eq!(ds.train.len(), 1000);
        assert_eq!(ds.test.len(), 200);
        assert!(ds.inputs.data().iter().all(|v| (-4.0..4.0).contains(v)));
        let again = sample_fit_dataset(FitLevel::new(0.0, 0.0, 0.0), 1000, 200, &mut Rng::seed(1), 1).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn level_zero_mean_is_near_zero() {
        let mut rng = Rng::seed(5);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = [rng.uniform_scalar(-4.0, 4.0), rng.uniform_scalar(-4.0, 4.0)];
            sum += target_2d(&x, FitLevel::new(0.0, 0.0, 0.0)).unwrap();
        }
        assert!((sum / n as f64).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn level_zero_even_under_joint_negation(x1 in -4.0f64..4.0, x2 in -4.0f64..4.0) {
            let l = FitLevel::new(0.0, 0.0, 0.0);
            prop_assert_eq!(target_2d(&[x1, x2], l).unwrap(), target_2d(&[-x1, -x2], l).unwrap());
        }
    }
}
