use nalgebra::{DMatrix, SymmetricEigen};

use super::{GmnmConfig, GmnmParams, Mode};
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Eigenvalues above this negative bound are treated as rounding noise.
const PSD_SLACK: f64 = 1e-10;

/// Builds a single quadratic-mode AGP whose aggregated projection is exactly
/// the quadratic form `y(z) = zᵀPz`.
///
/// With `P = Σ_n λ_n v_n v_nᵀ`, projection `n` uses `a_n = v_n`, `b_n = 0`
/// and `α_n = λ_n` (stored as `√λ_n`), so the AGP response is
/// `exp(−zᵀPz / 2)`: a Gaussian with precision matrix `P`, center 0 and
/// mixing weight 1.
pub fn mahalanobis_embed(p: &Tensor) -> Result<GmnmParams> {
    if p.rank() != 2 || p.shape()[0] != p.shape()[1] {
        return Err(Error::NotPsd(format!("expected a square matrix, got {:?}", p.shape())));
    }
    let d = p.shape()[0];
    let scale = p.max_abs().max(1.0);
    for i in 0..d {
        for j in 0..i {
            let (pij, pji) = (p.get(&[i, j]), p.get(&[j, i]));
            if (pij - pji).abs() > 1e-12 * scale {
                return Err(Error::NotPsd(format!("P[{i},{j}] = {pij} but P[{j},{i}] = {pji}")));
            }
        }
    }

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, p.data()));
    let mut a = Vec::with_capacity(d * d);
    let mut alpha_raw = Vec::with_capacity(d);
    for n in 0..d {
        let lambda = eig.eigenvalues[n];
        if lambda < -PSD_SLACK {
            return Err(Error::NotPsd(format!("eigenvalue {lambda} is negative")));
        }
        alpha_raw.push(lambda.max(0.0).sqrt());
        a.extend(eig.eigenvectors.column(n).iter().copied());
    }

    let config = GmnmConfig::new(d, 1, 1).with_mode(Mode::Quadratic).with_trainable_mu(false);
    Ok(GmnmParams {
        mu: Tensor::zeros([1, d]),
        a: Tensor::new([1, d, d], a)?,
        b: Tensor::zeros([1, d]),
        alpha_raw: Tensor::matrix(1, d, alpha_raw)?,
        beta_raw: Tensor::zeros([1]),
        pi: Tensor::full([1, 1], 1.0),
        config,
    })
}
