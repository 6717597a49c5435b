//! SGD with momentum and weight decay.

use super::{Tensor, TensorId};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Stochastic gradient descent.
///
/// The update per parameter is
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`,
/// with one persistent velocity buffer per parameter.
pub struct Sgd {
    lr: f32,
    momentum: f32,
    weight_decay: f32,
    velocity: HashMap<TensorId, Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    /// Replace the learning rate (step decay support).
    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// Apply one update to every named parameter. Errors if any parameter is
    /// missing its gradient.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        for (name, param) in params {
            let grad = param
                .grad()
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            let v = self
                .velocity
                .entry(param.id())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let (momentum, wd, lr) = (self.momentum, self.weight_decay, self.lr);
            param.update_data(|data| {
                for i in 0..data.len() {
                    v[i] = momentum * v[i] + grad[i] + wd * data[i];
                    data[i] -= lr * v[i];
                }
            });
        }
        Ok(())
    }

    /// Drop all accumulated gradients so the next backward starts fresh.
    pub fn zero_grad(&self, params: &[(String, Tensor)]) {
        for (_, param) in params {
            param.zero_grad();
        }
    }

    /// Seed the velocity buffer of one parameter (test hook).
    #[doc(hidden)]
    pub fn set_velocity(&mut self, param: &Tensor, v: Vec<f32>) {
        self.velocity.insert(param.id(), v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, value: f32) -> (String, Tensor) {
        (name.to_string(), Tensor::param(vec![1], vec![value]).unwrap())
    }

    #[test]
    fn plain_gradient_step() {
        let params = vec![one("w", 1.0)];
        params[0].1.accumulate_grad(&[1.0]);
        let mut opt = Sgd::new(0.1, 0.0, 0.0);
        opt.step(&params).unwrap();
        assert_eq!(params[0].1.to_vec(), vec![0.9]);
    }

    #[test]
    fn momentum_carries_prior_velocity() {
        // v = 0.9 * 1.0 + 0 + 0 = 0.9; param = 1.0 - 0.1 * 0.9 = 0.91
        let params = vec![one("w", 1.0)];
        params[0].1.accumulate_grad(&[0.0]);
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        opt.set_velocity(&params[0].1, vec![1.0]);
        opt.step(&params).unwrap();
        let got = params[0].1.to_vec()[0];
        assert!((got - 0.91).abs() < 1e-7, "got {got}");
    }

    #[test]
    fn weight_decay_shrinks_params() {
        // v = 0 + 0 + 0.001 * 2.0 = 0.002; param = 2.0 - 0.1 * 0.002 = 1.9998
        let params = vec![one("w", 2.0)];
        params[0].1.accumulate_grad(&[0.0]);
        let mut opt = Sgd::new(0.1, 0.0, 0.001);
        opt.step(&params).unwrap();
        let got = params[0].1.to_vec()[0];
        assert!((got - 1.9998).abs() < 1e-7, "got {got}");
    }

    #[test]
    fn missing_grad_is_an_error() {
        let params = vec![one("w", 1.0)];
        let mut opt = Sgd::new(0.1, 0.0, 0.0);
        let err = opt.step(&params).unwrap_err();
        assert!(err.to_string().contains("w"));
    }

    #[test]
    fn velocity_persists_across_steps() {
        let params = vec![one("w", 0.0)];
        let mut opt = Sgd::new(1.0, 0.5, 0.0);
        params[0].1.accumulate_grad(&[1.0]);
        opt.step(&params).unwrap(); // v=1, p=-1
        opt.zero_grad(&params);
        params[0].1.accumulate_grad(&[0.0]);
        opt.step(&params).unwrap(); // v=0.5, p=-1.5
        let got = params[0].1.to_vec()[0];
        assert!((got + 1.5).abs() < 1e-7, "got {got}");
    }
}
