//! Adam optimizer: per-parameter adaptive steps from bias-corrected first
//! and second moment estimates.

use crate::diff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over an ordered parameter list. State is keyed by
    /// position, so the list must be stable across steps.
    pub fn step(&mut self, params: &mut [(String, Tensor<T>)], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument {
                op: "Adam::step",
                msg: format!("{} params vs {} grads", params.len(), grads.len()),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_all_finite() {
                return Err(Error::Diverged {
                    step: self.t as usize,
                    detail: format!("non-finite gradient for '{}'", params[i].0),
                });
            }
        }
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((param, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = param.1.data_mut();
            let (md, vd, gd) = (m.data_mut(), v.data_mut(), g.data());
            for j in 0..p.len() {
                md[j] = b1 * md[j] + (one - b1) * gd[j];
                vd[j] = b2 * vd[j] + (one - b2) * gd[j] * gd[j];
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> Vec<(String, Tensor<f64>)> {
        vec![("p".into(), Tensor::scalar(v))]
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut opt = Adam::new(1e-3);
        let mut p = one_param(0.0);
        opt.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p[0].1.data()[0] + 1e-3).abs() < 1e-8, "{}", p[0].1.data()[0]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut opt = Adam::new(1e-2);
        let mut p = one_param(0.7);
        opt.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p[0].1.data()[0], 0.7);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (x - 3)^2
        let mut opt = Adam::new(0.05);
        let mut p = one_param(-2.0);
        for _ in 0..500 {
            let x = p[0].1.data()[0];
            let g = 2.0 * (x - 3.0);
            opt.step(&mut p, &[Tensor::scalar(g)]).unwrap();
        }
        assert!((p[0].1.data()[0] - 3.0).abs() < 1e-2, "{}", p[0].1.data()[0]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut opt = Adam::new(1e-3);
        let mut p = one_param(0.0);
        assert!(opt.step(&mut p, &[Tensor::scalar(f64::NAN)]).is_err());
    }
}
