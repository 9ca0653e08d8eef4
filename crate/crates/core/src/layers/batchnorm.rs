use serde::{Deserialize, Serialize};

use super::{expect_shape, Mode, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel batch normalization over every axis but the last.
///
/// Train mode normalizes with the (biased) batch statistics and folds them
/// into the running estimates as `running = momentum * running + (1 - momentum) * batch`.
/// Eval mode uses the running estimates only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Scalar> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    mode: Mode,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with_hyper(channels: usize, momentum: f64, epsilon: f64) -> Self {
        let ch = channels.max(1);
        Self {
            gamma: Param::new(Tensor::from_parts(vec![ch], vec![T::one(); ch])),
            beta: Param::new(Tensor::from_parts(vec![ch], vec![T::zero(); ch])),
            running_mean: Tensor::from_parts(vec![ch], vec![T::zero(); ch]),
            running_var: Tensor::from_parts(vec![ch], vec![T::one(); ch]),
            momentum,
            epsilon,
            frozen: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value().len()
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.last() {
            Some(&c) if input.len() >= 2 && c == self.channels() => Ok(input.to_vec()),
            _ => Err(Error::Dimension {
                op: "batchnorm",
                left: input.to_vec(),
                right: vec![self.channels()],
            }),
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        self.output_shape(x.shape())?;
        let c = self.channels();
        let eps = T::lit(self.epsilon);
        let (mean, var) = match mode {
            Mode::Train => {
                let (mean, var) = batch_moments(x.data(), c);
                let mom = T::lit(self.momentum);
                let rest = T::one() - mom;
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = mom * *rm + rest * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = mom * *rv + rest * var[ch];
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v.max(T::zero()) + eps).sqrt()).collect();
        let gamma = self.gamma.value().data();
        let beta = self.beta.value().data();
        let mut xhat = x.data().to_vec();
        let mut out = vec![T::zero(); xhat.len()];
        for (hrow, orow) in xhat.chunks_mut(c).zip(out.chunks_mut(c)) {
            for ch in 0..c {
                let h = (hrow[ch] - mean[ch]) * inv_std[ch];
                hrow[ch] = h;
                orow[ch] = gamma[ch] * h + beta[ch];
            }
        }
        let cache = BatchNormCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
            mode,
        };
        Ok((Tensor::from_parts(x.shape().to_vec(), out), cache))
    }

    pub(crate) fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.output_shape(x.shape())?;
        let c = self.channels();
        let eps = T::lit(self.epsilon);
        let mean = self.running_mean.data();
        let gamma = self.gamma.value().data();
        let beta = self.beta.value().data();
        let scale: Vec<T> = self
            .running_var
            .data()
            .iter()
            .zip(gamma)
            .map(|(&v, &g)| g / (v.max(T::zero()) + eps).sqrt())
            .collect();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - mean[ch]) * scale[ch] + beta[ch];
            }
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), out))
    }

    pub(crate) fn backward(&mut self, grad_out: &Tensor<T>, cache: &BatchNormCache<T>) -> Result<Tensor<T>> {
        expect_shape("batchnorm backward", grad_out, &cache.shape)?;
        let c = self.channels();
        let gs = grad_out.data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gh = vec![T::zero(); c];
        for (grow, hrow) in gs.chunks(c).zip(cache.xhat.chunks(c)) {
            for ch in 0..c {
                sum_g[ch] += grow[ch];
                sum_gh[ch] += grow[ch] * hrow[ch];
            }
        }
        for (acc, &v) in self.gamma.grad_mut().iter_mut().zip(&sum_gh) {
            *acc += v;
        }
        for (acc, &v) in self.beta.grad_mut().iter_mut().zip(&sum_g) {
            *acc += v;
        }
        let gamma = self.gamma.value().data();
        let mut grad_in = vec![T::zero(); gs.len()];
        match cache.mode {
            Mode::Train => {
                let m = T::lit((gs.len() / c) as f64);
                for ((irow, grow), hrow) in grad_in.chunks_mut(c).zip(gs.chunks(c)).zip(cache.xhat.chunks(c)) {
                    for ch in 0..c {
                        let k = gamma[ch] * cache.inv_std[ch] / m;
                        irow[ch] = k * (m * grow[ch] - sum_g[ch] - hrow[ch] * sum_gh[ch]);
                    }
                }
            }
            Mode::Eval => {
                for (irow, grow) in grad_in.chunks_mut(c).zip(gs.chunks(c)) {
                    for ch in 0..c {
                        irow[ch] = grow[ch] * gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
        }
        Ok(Tensor::from_parts(cache.shape.clone(), grad_in))
    }
}

/// Biased per-channel mean and variance of a channels-last buffer.
fn batch_moments<T: Scalar>(data: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let m = T::lit((data.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for row in data.chunks(c) {
        for ch in 0..c {
            mean[ch] += row[ch];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![T::zero(); c];
    for row in data.chunks(c) {
        for ch in 0..c {
            let d = row[ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}
