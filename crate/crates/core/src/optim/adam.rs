use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Parameter update rule applied to the trainable tensors of a model.
pub trait Optimizer {
    /// `params`, `trainable` and `grads` are aligned; frozen entries are
    /// left untouched.
    fn step(&mut self, params: Vec<&mut Tensor>, trainable: &[bool], grads: &[Tensor]) -> Result<()>;
}

impl<O: Optimizer + ?Sized> Optimizer for Box<O> {
    fn step(&mut self, params: Vec<&mut Tensor>, trainable: &[bool], grads: &[Tensor]) -> Result<()> {
        (**self).step(params, trainable, grads)
    }
}

fn check_aligned(params: &[&mut Tensor], trainable: &[bool], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.len() != trainable.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer got {} params, {} flags, {} gradients",
            params.len(),
            trainable.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Second-moment estimates, one vector per parameter tensor.
    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

impl Optimizer for Adam {
    fn step(&mut self, mut params: Vec<&mut Tensor>, trainable: &[bool], grads: &[Tensor]) -> Result<()> {
        check_aligned(&params, trainable, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, param) in params.iter_mut().enumerate() {
            if !trainable[idx] {
                continue;
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (((p, &g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(grads[idx].data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, mut params: Vec<&mut Tensor>, trainable: &[bool], grads: &[Tensor]) -> Result<()> {
        check_aligned(&params, trainable, grads)?;
        for (idx, param) in params.iter_mut().enumerate() {
            if trainable[idx] {
                for (p, g) in param.data_mut().iter_mut().zip(grads[idx].data()) {
                    *p -= self.lr * g;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_once(opt: &mut impl Optimizer, w: &mut Tensor, g: f64) {
        let grad = Tensor::full(w.shape().to_vec(), g);
        opt.step(vec![w], &[true], &[grad]).unwrap();
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(1e-3);
        let mut w = Tensor::scalar(0.5).unwrap();
        step_once(&mut adam, &mut w, 1.0);
        // ε = 1e-8 perturbs the step at the 1e-11 level
        assert!((w.item().unwrap() - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(1e-2);
        let mut w = Tensor::vector(vec![1.0, -2.0]).unwrap();
        for _ in 0..10 {
            step_once(&mut adam, &mut w, 0.0);
        }
        assert_eq!(w.data(), &[1.0, -2.0]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w², grad 2w
        let mut adam = Adam::new(0.05);
        let mut w = Tensor::scalar(1.0).unwrap();
        for _ in 0..500 {
            let g = 2.0 * w.item().unwrap();
            step_once(&mut adam, &mut w, g);
        }
        assert!(w.item().unwrap().abs() < 1e-3, "w = {}", w.item().unwrap());
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let mut adam = Adam::new(1e-2);
        let mut w = Tensor::vector(vec![0.0; 3]).unwrap();
        for i in 0..20 {
            step_once(&mut adam, &mut w, if i % 2 == 0 { -3.0 } else { 1.0 });
            assert!(adam.second_moments()[0].iter().all(|&v| v >= 0.0));
        }
        assert_eq!(adam.steps_taken(), 20);
    }

    #[test]
    fn frozen_tensor_untouched() {
        let mut adam = Adam::new(0.1);
        let mut a = Tensor::vector(vec![1.0]).unwrap();
        let mut b = Tensor::vector(vec![1.0]).unwrap();
        let g = Tensor::vector(vec![1.0]).unwrap();
        adam.step(vec![&mut a, &mut b], &[true, false], &[g.clone(), g]).unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data()[0].to_bits(), 1.0f64.to_bits());
    }

    #[test]
    fn misaligned_rejected() {
        let mut adam = Adam::new(0.1);
        let mut a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let g = Tensor::vector(vec![1.0]).unwrap();
        assert!(adam.step(vec![&mut a], &[true], &[g]).is_err());
    }

    #[test]
    fn sgd_descends_on_convex_quadratic() {
        let mut sgd = Sgd { lr: 1e-2 };
        let mut w = Tensor::scalar(3.0).unwrap();
        let mut prev = 9.0;
        for _ in 0..10 {
            let g = 2.0 * w.item().unwrap();
            step_once(&mut sgd, &mut w, g);
            let loss = w.item().unwrap().powi(2);
            assert!(loss < prev);
            prev = loss;
        }
    }
}
