//! Forward-mode hyper-dual numbers for exact first and second directional
//! derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{invalid, Result};

/// Hyper-dual number with both infinitesimal directions equal: `d1` carries
/// ∂f/∂x_k and `d2` carries ∂²f/∂x_k².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperDual {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl HyperDual {
    pub fn constant(value: f64) -> Self {
        HyperDual { value, d1: 0.0, d2: 0.0 }
    }

    /// The seeded input variable.
    pub fn variable(value: f64) -> Self {
        HyperDual { value, d1: 1.0, d2: 0.0 }
    }

    /// Chain rule for a scalar function with derivatives `f0, f1, f2` at
    /// `self.value`.
    #[inline]
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self {
        HyperDual {
            value: f0,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        HyperDual {
            value: self.value + o.value,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }
}

impl Sub for HyperDual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        HyperDual {
            value: self.value - o.value,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
        }
    }
}

impl Mul for HyperDual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        HyperDual {
            value: self.value * o.value,
            d1: self.d1 * o.value + self.value * o.d1,
            d2: self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = o.recip();
        self * inv
    }
}

impl Neg for HyperDual {
    type Output = Self;
    fn neg(self) -> Self {
        HyperDual {
            value: -self.value,
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

impl HyperDual {
    fn recip(self) -> Self {
        let v = self.value;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

/// Numeric type that model forwards can be written against, so the same code
/// evaluates on plain floats and on hyper-duals.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self> {
    fn cst(v: f64) -> Self;
    fn real(self) -> f64;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn sinh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn relu(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn scale(self, c: f64) -> Self {
        self * Self::cst(c)
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn real(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn sigmoid(self) -> Self {
        super::tape::sigmoid(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
}

impl Scalar for HyperDual {
    fn cst(v: f64) -> Self {
        HyperDual::constant(v)
    }
    fn real(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }
    fn sinh(self) -> Self {
        self.chain(self.value.sinh(), self.value.cosh(), self.value.sinh())
    }
    fn sigmoid(self) -> Self {
        let s = super::tape::sigmoid(self.value);
        let d = s * (1.0 - s);
        self.chain(s, d, d * (1.0 - 2.0 * s))
    }
    fn relu(self) -> Self {
        if self.value > 0.0 {
            self
        } else {
            HyperDual::constant(0.0)
        }
    }
}

/// Value, ∂f/∂x_k and ∂²f/∂x_k² of `f` at `x`.
pub fn hyperdual_d2<F>(f: F, x: &[f64], k: usize) -> Result<(f64, f64, f64)>
where
    F: Fn(&[HyperDual]) -> Result<HyperDual>,
{
    if k >= x.len() {
        return Err(invalid(format!("direction {k} out of range for dimension {}", x.len())));
    }
    let args: Vec<HyperDual> = x
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == k { HyperDual::variable(v) } else { HyperDual::constant(v) })
        .collect();
    let out = f(&args)?;
    Ok((out.value, out.d1, out.d2))
}

/// Gradient and Laplacian of `f` at `x`, one hyper-dual pass per axis.
pub fn hyperdual_grad_laplacian<F>(f: F, x: &[f64]) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[HyperDual]) -> Result<HyperDual>,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut lap = 0.0;
    for k in 0..x.len() {
        let (_, d1, d2) = hyperdual_d2(&f, x, k)?;
        grad.push(d1);
        lap += d2;
    }
    Ok((grad, lap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_derivatives() {
        let (v, d1, d2) = hyperdual_d2(|x| Ok((x[0] * HyperDual::cst(PI)).sin()), &[0.5], 0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(d1.abs() < 1e-15);
        assert!((d2 + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn bilinear_has_zero_curvature() {
        for k in 0..2 {
            let (_, _, d2) = hyperdual_d2(|x| Ok(x[0] * x[1]), &[0.7, -1.3], k).unwrap();
            assert_eq!(d2, 0.0);
        }
    }

    #[test]
    fn product_rule_matches_definition() {
        let u = HyperDual {
            value: 1.5,
            d1: -0.5,
            d2: 2.0,
        };
        let v = HyperDual {
            value: -0.25,
            d1: 3.0,
            d2: 0.75,
        };
        let p = u * v;
        assert_eq!(p.d2, u.d2 * v.value + 2.0 * u.d1 * v.d1 + u.value * v.d2);
    }

    #[test]
    fn elementary_functions_match_finite_differences() {
        type F = fn(HyperDual) -> HyperDual;
        let cases: [(F, fn(f64) -> f64); 6] = [
            (|x| x.exp(), f64::exp),
            (|x| x.cos(), f64::cos),
            (|x| x.tanh(), f64::tanh),
            (|x| x.sinh(), f64::sinh),
            (|x| x.sigmoid(), crate::engine::tape::sigmoid),
            (
                |x| HyperDual::cst(1.0) / (x.square() + HyperDual::cst(1.0)),
                |x| 1.0 / (x * x + 1.0),
            ),
        ];
        let h = 1e-4;
        for (hd, plain) in cases {
            for &x in &[-1.3, 0.2, 0.9] {
                let (_, d1, d2) = hyperdual_d2(|a| Ok(hd(a[0])), &[x], 0).unwrap();
                let fd1 = (plain(x + h) - plain(x - h)) / (2.0 * h);
                let fd2 = (plain(x + h) - 2.0 * plain(x) + plain(x - h)) / (h * h);
                assert!((d1 - fd1).abs() < 1e-7, "d1 {d1} vs {fd1}");
                assert!((d2 - fd2).abs() < 1e-5, "d2 {d2} vs {fd2}");
            }
        }
    }

    #[test]
    fn bad_direction_is_an_error() {
        assert!(hyperdual_d2(|x| Ok(x[0]), &[1.0], 1).is_err());
    }
}
