use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{expect_shape, he_uniform, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn_acc, Tensor};

/// Affine map `y = x W + b` with `W: in x out`. No activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dense<T: Scalar> {
    pub weights: Param<T>,
    pub bias: Param<T>,
    pub frozen: bool,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config("dense layer dimensions must be positive".into()));
        }
        let weights = he_uniform(&[inputs, outputs], inputs, rng)?;
        Ok(Self {
            weights: Param::new(weights),
            bias: Param::new(Tensor::zeros(&[outputs])?),
            frozen: false,
        })
    }

    /// All-zero weights and bias. Used for output heads, which then start
    /// from a zero prediction.
    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config("dense layer dimensions must be positive".into()));
        }
        Ok(Self {
            weights: Param::new(Tensor::zeros(&[inputs, outputs])?),
            bias: Param::new(Tensor::zeros(&[outputs])?),
            frozen: false,
        })
    }

    pub fn from_parts(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, out) = weights.expect_matrix("dense weights")?;
        if bias.shape() != [out] {
            return Err(Error::Dimension {
                op: "dense bias",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weights: Param::new(weights),
            bias: Param::new(bias),
            frozen: false,
        })
    }

    /// `W = I`, `b = 0`.
    pub fn identity(width: usize) -> Self {
        let mut w = vec![T::zero(); width * width];
        for i in 0..width {
            w[i * width + i] = T::one();
        }
        Self {
            weights: Param::new(Tensor::from_parts(vec![width, width], w)),
            bias: Param::new(Tensor::from_parts(vec![width], vec![T::zero(); width])),
            frozen: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.value().shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.value().shape()[1]
    }

    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            &[n, f] if f == self.inputs() => Ok(vec![n, self.outputs()]),
            _ => Err(Error::Dimension {
                op: "dense",
                left: input.to_vec(),
                right: self.weights.value().shape().to_vec(),
            }),
        }
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.output_shape(x.shape())?;
        let (n, k, m) = (shape[0], self.inputs(), self.outputs());
        let mut out = vec![T::zero(); n * m];
        gemm_nn(x.data(), self.weights.value().data(), &mut out, n, k, m);
        let b = self.bias.value().data();
        for row in out.chunks_mut(m) {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(Tensor::from_parts(shape, out))
    }

    pub(crate) fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.output_shape(input.shape())?;
        expect_shape("dense backward", grad_out, &shape)?;
        let (n, k, m) = (shape[0], self.inputs(), self.outputs());
        gemm_tn_acc(input.data(), grad_out.data(), self.weights.grad_mut(), n, k, m);
        let gb = self.bias.grad_mut();
        for row in grad_out.data().chunks(m) {
            for (acc, &g) in gb.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut grad_in = vec![T::zero(); n * k];
        gemm_nt(grad_out.data(), self.weights.value().data(), &mut grad_in, n, m, k);
        Ok(Tensor::from_parts(vec![n, k], grad_in))
    }

    /// Multiplies output column `j` (weights and bias) by `factors[j]`.
    pub fn scale_outputs(&mut self, factors: &[T]) -> Result<()> {
        let m = self.outputs();
        if factors.len() != m {
            return Err(Error::Dimension {
                op: "scale_outputs",
                left: vec![m],
                right: vec![factors.len()],
            });
        }
        for row in self.weights.value_mut().data_mut().chunks_mut(m) {
            for (w, &f) in row.iter_mut().zip(factors) {
                *w *= f;
            }
        }
        for (b, &f) in self.bias.value_mut().data_mut().iter_mut().zip(factors) {
            *b *= f;
        }
        Ok(())
    }
}
