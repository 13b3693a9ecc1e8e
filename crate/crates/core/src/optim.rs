//! Trainable parameters and SGD with momentum, weight decay and a step schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A trainable tensor together with its gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self { value, grad, velocity }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// One entry of a step schedule: from `epoch` on, the rate is multiplied by `factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStep {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: Vec<LrStep>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            lr_schedule: vec![LrStep { epoch: 40, factor: 0.1 }, LrStep { epoch: 50, factor: 0.1 }],
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        for pair in self.lr_schedule.windows(2) {
            if pair[1].epoch <= pair[0].epoch {
                return Err(Error::invalid("lr_schedule epochs must be strictly increasing"));
            }
        }
        if self.lr_schedule.iter().any(|s| !(s.factor > 0.0 && s.factor.is_finite())) {
            return Err(Error::invalid("lr_schedule factors must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule.iter().filter(|s| s.epoch <= epoch).fold(self.learning_rate, |lr, s| lr * s.factor)
    }
}

/// `g = grad + wd·w; v = μ·v + g; w -= lr·v` for every parameter.
pub fn sgd_step<'a, T, I>(params: I, cfg: &OptimizerConfig, epoch: usize)
where
    T: Scalar,
    I: IntoIterator<Item = &'a mut Param<T>>,
{
    let lr = T::from_f64(cfg.lr_at(epoch));
    let mu = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    for p in params {
        let w = p.value.data_mut();
        let g = p.grad.data();
        let v = p.velocity.data_mut();
        for k in 0..w.len() {
            let gk = g[k] + wd * w[k];
            v[k] = mu * v[k] + gk;
            w[k] = w[k] - lr * v[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64) -> Param<f64> {
        Param::new(Tensor::new(vec![1], vec![w]).unwrap())
    }

    fn cfg(lr: f64, momentum: f64) -> OptimizerConfig {
        OptimizerConfig { learning_rate: lr, momentum, weight_decay: 0.0, lr_schedule: vec![] }
    }

    #[test]
    fn plain_step() {
        let mut p = scalar_param(1.0);
        p.grad.data_mut()[0] = 1.0;
        sgd_step([&mut p], &cfg(0.1, 0.0), 0);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = scalar_param(0.0);
        let c = cfg(1.0, 0.9);
        for _ in 0..2 {
            p.grad.data_mut()[0] = 1.0;
            sgd_step([&mut p], &c, 0);
        }
        assert!((p.value.data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = scalar_param(2.0);
        let mut c = cfg(0.5, 0.0);
        c.weight_decay = 0.1;
        sgd_step([&mut p], &c, 0);
        assert!((p.value.data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn step_schedule() {
        let c = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            lr_schedule: vec![LrStep { epoch: 160, factor: 0.01 }],
        };
        assert_eq!(c.lr_at(159), 0.1);
        assert!((c.lr_at(160) - 0.001).abs() < 1e-15);
        let d = OptimizerConfig::default();
        assert!((d.lr_at(45) - 0.01).abs() < 1e-15);
        assert!((d.lr_at(55) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        let mut c = OptimizerConfig {
            lr_schedule: vec![LrStep { epoch: 5, factor: 0.1 }, LrStep { epoch: 5, factor: 0.1 }],
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.lr_schedule = vec![LrStep { epoch: 5, factor: 0.0 }];
        assert!(c.validate().is_err());
        c.lr_schedule.clear();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }
}
