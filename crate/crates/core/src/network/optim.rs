use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Update rule and its hyper-parameters. The moment settings are ignored by
/// plain SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.kind == OptimizerKind::Adam {
            if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
                return Err(Error::Config("adam betas must lie in [0, 1)".into()));
            }
            if !(self.epsilon > 0.0) {
                return Err(Error::Config("adam epsilon must be positive".into()));
            }
        }
        Ok(())
    }
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state for one network. Slots follow the network's parameter
/// order; frozen parameters get no slot and are never written.
pub struct Optimizer<T: Scalar> {
    config: OptimizerConfig,
    slots: Vec<Option<Moments<T>>>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig, params: &[(&mut Param<T>, bool)]) -> Result<Self> {
        config.validate()?;
        let slots = params
            .iter()
            .map(|(p, frozen)| match (frozen, config.kind) {
                (true, _) | (false, OptimizerKind::Sgd) => None,
                (false, OptimizerKind::Adam) => Some(Moments {
                    m: vec![T::zero(); p.value().len()],
                    v: vec![T::zero(); p.value().len()],
                }),
            })
            .collect();
        Ok(Self { config, slots, step: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using the accumulated gradients.
    pub fn step(&mut self, params: Vec<(&mut Param<T>, bool)>) -> Result<()> {
        if params.len() != self.slots.len() {
            return Err(Error::Usage("parameter list changed since optimizer creation".into()));
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                let lr = T::lit(lr);
                for (p, frozen) in params {
                    if frozen {
                        continue;
                    }
                    let (value, grad) = p.split_mut();
                    for (w, &g) in value.iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, epsilon, .. } = self.config;
                let t = self.step as i32;
                let step_size = T::lit(lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t)));
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
                let (c1, c2) = (T::one() - b1, T::one() - b2);
                for ((p, frozen), slot) in params.into_iter().zip(&mut self.slots) {
                    let (true, Some(mom)) = (!frozen, slot.as_mut()) else { continue };
                    let (value, grad) = p.split_mut();
                    for (((w, &g), m), v) in value.iter_mut().zip(grad).zip(&mut mom.m).zip(&mut mom.v) {
                        *m = b1 * *m + c1 * g;
                        *v = b2 * *v + c2 * g * g;
                        *w -= step_size * *m / (v.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Param::new(Tensor::<f64>::from_vec(vec![3.0, -2.0]).unwrap());
        let cfg = OptimizerConfig { learning_rate: 0.05, ..OptimizerConfig::default() };
        let mut opt = Optimizer::new(cfg, &[(&mut p, false)]).unwrap();
        for _ in 0..2000 {
            let x: Vec<f64> = p.value().data().to_vec();
            let g = p.grad_mut();
            g[0] = 2.0 * x[0];
            g[1] = 2.0 * x[1];
            opt.step(vec![(&mut p, false)]).unwrap();
        }
        assert!(p.value().data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut p = Param::new(Tensor::<f64>::from_vec(vec![1.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerConfig::default(), &[(&mut p, false)]).unwrap();
        p.grad_mut()[0] = 123.0;
        opt.step(vec![(&mut p, false)]).unwrap();
        assert!((p.value().data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut a = Param::new(Tensor::<f64>::from_vec(vec![1.0, 2.0]).unwrap());
        let mut b = Param::new(Tensor::<f64>::from_vec(vec![1.0, 2.0]).unwrap());
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let cfg = OptimizerConfig { kind, learning_rate: 0.1, ..OptimizerConfig::default() };
            let mut opt = Optimizer::new(cfg, &[(&mut a, true), (&mut b, false)]).unwrap();
            a.grad_mut().fill(1.0);
            b.grad_mut().fill(1.0);
            let before = a.value().clone();
            opt.step(vec![(&mut a, true), (&mut b, false)]).unwrap();
            assert_eq!(a.value(), &before);
            assert_ne!(b.value().data(), before.data());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OptimizerConfig { learning_rate: 0.0, ..OptimizerConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = OptimizerConfig { beta1: 1.0, ..OptimizerConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(OptimizerConfig { kind: OptimizerKind::Sgd, ..cfg }.validate().is_ok());
    }
}
