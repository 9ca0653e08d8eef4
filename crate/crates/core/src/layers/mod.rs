//! Layer kernels: forward and backward passes with parameter gradients.
//!
//! Every layer consumes and produces [`Tensor`]s. Dense layers expect
//! `N x features` matrices; convolution, pooling and batch normalization
//! accept `N x H x W x C` image batches (batch normalization also accepts
//! `N x features`). Parameter gradients accumulate into the layer until
//! [`Layer::zero_grads`] is called.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use batchnorm::BatchNorm;
pub use conv::Conv2D;
pub use dense::Dense;
pub use dropout::Dropout;
pub use pool::MaxPool2D;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
///
/// The gradient buffer is allocated on first use and is not serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Param<T: Scalar> {
    value: Tensor<T>,
    #[serde(skip)]
    grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { value, grad: Vec::new() }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    /// Accumulated gradient; empty until the first backward pass.
    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Read-only value alongside the writable gradient, for backward passes.
    pub fn value_and_grad_mut(&mut self) -> (&[T], &mut [T]) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
        (self.value.data(), &mut self.grad)
    }

    /// Value and gradient borrowed together, for optimizer updates.
    pub fn split_mut(&mut self) -> (&mut [T], &[T]) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![T::zero(); self.value.len()];
        }
        (self.value.data_mut(), &self.grad)
    }
}

/// Per-call state a layer needs for its backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T: Scalar> {
    Dense { input: Tensor<T> },
    Relu { active: Vec<bool>, shape: Vec<usize> },
    Conv2D { input: Tensor<T> },
    MaxPool2D { argmax: Vec<usize>, input_shape: Vec<usize> },
    BatchNorm(batchnorm::BatchNormCache<T>),
    Dropout { mask: Option<Vec<T>> },
    Flatten { input_shape: Vec<usize> },
}

impl<T: Scalar> Cache<T> {
    fn kind(&self) -> &'static str {
        match self {
            Cache::Dense { .. } => "dense",
            Cache::Relu { .. } => "relu",
            Cache::Conv2D { .. } => "conv2d",
            Cache::MaxPool2D { .. } => "maxpool2d",
            Cache::BatchNorm(_) => "batchnorm",
            Cache::Dropout { .. } => "dropout",
            Cache::Flatten { .. } => "flatten",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", bound = "")]
pub enum Layer<T: Scalar> {
    Dense(Dense<T>),
    Relu,
    Conv2D(Conv2D<T>),
    MaxPool2D(MaxPool2D),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout),
    Flatten,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Conv2D(_) => "conv2d",
            Layer::MaxPool2D(_) => "maxpool2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten => "flatten",
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        match self {
            Layer::Dense(d) => Ok((d.apply(x)?, Cache::Dense { input: x.clone() })),
            Layer::Relu => {
                let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
                let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
                Ok((out, Cache::Relu { active, shape: x.shape().to_vec() }))
            }
            Layer::Conv2D(c) => Ok((c.apply(x)?, Cache::Conv2D { input: x.clone() })),
            Layer::MaxPool2D(p) => {
                let (out, argmax) = p.apply(x)?;
                Ok((out, Cache::MaxPool2D { argmax, input_shape: x.shape().to_vec() }))
            }
            Layer::BatchNorm(bn) => {
                let (out, cache) = bn.forward(x, mode)?;
                Ok((out, Cache::BatchNorm(cache)))
            }
            Layer::Dropout(d) => {
                let (out, mask) = d.forward(x, mode, rng)?;
                Ok((out, Cache::Dropout { mask }))
            }
            Layer::Flatten => Ok((flatten(x)?, Cache::Flatten { input_shape: x.shape().to_vec() })),
        }
    }

    /// Eval-mode forward pass without building a cache or touching state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(d) => d.apply(x),
            Layer::Relu => Ok(x.map(|v| if v > T::zero() { v } else { T::zero() })),
            Layer::Conv2D(c) => c.apply(x),
            Layer::MaxPool2D(p) => Ok(p.apply(x)?.0),
            Layer::BatchNorm(bn) => bn.infer(x),
            Layer::Dropout(d) => {
                d.validate()?;
                Ok(x.clone())
            }
            Layer::Flatten => flatten(x),
        }
    }

    /// Propagates `grad_out` to the input, accumulating parameter gradients.
    ///
    /// Frozen layers still return the input gradient so that trainable
    /// layers below them keep learning.
    pub fn backward(&mut self, grad_out: &Tensor<T>, cache: &Cache<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input }) => d.backward(input, grad_out),
            (Layer::Relu, Cache::Relu { active, shape }) => {
                expect_shape("relu backward", grad_out, shape)?;
                let data = grad_out
                    .data()
                    .iter()
                    .zip(active)
                    .map(|(&g, &a)| if a { g } else { T::zero() })
                    .collect();
                Tensor::new(shape.clone(), data)
            }
            (Layer::Conv2D(c), Cache::Conv2D { input }) => c.backward(input, grad_out),
            (Layer::MaxPool2D(p), Cache::MaxPool2D { argmax, input_shape }) => {
                p.backward(grad_out, argmax, input_shape)
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm(c)) => bn.backward(grad_out, c),
            (Layer::Dropout(_), Cache::Dropout { mask }) => match mask {
                Some(mask) => {
                    if mask.len() != grad_out.len() {
                        return Err(Error::Usage("dropout mask does not match gradient".into()));
                    }
                    let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    Tensor::new(grad_out.shape().to_vec(), data)
                }
                None => Ok(grad_out.clone()),
            },
            (Layer::Flatten, Cache::Flatten { input_shape }) => grad_out.reshape(input_shape),
            (layer, cache) => Err(Error::Usage(format!(
                "no {} cache for {} layer backward (got {})",
                layer.kind(),
                layer.kind(),
                cache.kind()
            ))),
        }
    }

    /// Trainable tensors in a fixed order, with the layer's frozen flag.
    pub fn params_mut(&mut self) -> Vec<(&mut Param<T>, bool)> {
        match self {
            Layer::Dense(d) => {
                let frozen = d.frozen;
                vec![(&mut d.weights, frozen), (&mut d.bias, frozen)]
            }
            Layer::Conv2D(c) => {
                let frozen = c.frozen;
                vec![(&mut c.filters, frozen), (&mut c.bias, frozen)]
            }
            Layer::BatchNorm(bn) => {
                let frozen = bn.frozen;
                vec![(&mut bn.gamma, frozen), (&mut bn.beta, frozen)]
            }
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::Conv2D(c) => vec![&c.filters, &c.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&mut self) {
        for (p, _) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Dense(d) => d.frozen,
            Layer::Conv2D(c) => c.frozen,
            Layer::BatchNorm(bn) => bn.frozen,
            _ => false,
        }
    }

    /// Sets the frozen flag; a no-op for parameterless layers.
    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Dense(d) => d.frozen = frozen,
            Layer::Conv2D(c) => c.frozen = frozen,
            Layer::BatchNorm(bn) => bn.frozen = frozen,
            _ => {}
        }
    }

    /// Output shape for a given input shape (leading axis is the batch).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => d.output_shape(input),
            Layer::Relu | Layer::Dropout(_) => Ok(input.to_vec()),
            Layer::Conv2D(c) => c.output_shape(input),
            Layer::MaxPool2D(p) => p.output_shape(input),
            Layer::BatchNorm(bn) => bn.output_shape(input),
            Layer::Flatten => match input {
                [] => Err(Error::Shape { shape: vec![], reason: "flatten of empty shape".into() }),
                [n, rest @ ..] => Ok(vec![*n, rest.iter().product::<usize>().max(1)]),
            },
        }
    }
}

fn flatten<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.reshape(&[x.rows(), x.row_len()])
}

pub(crate) fn expect_shape<T: Scalar>(op: &'static str, t: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Dimension {
            op,
            left: t.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    Ok(())
}

/// He-style uniform initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub(crate) fn he_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_layer, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn assert_grad_ok(report: GradCheck) {
        assert!(
            report.max_rel_error < 1e-4,
            "gradient check failed: {report:?}"
        );
    }

    #[test]
    fn relu_forward_backward() {
        let mut layer = Layer::<f64>::Relu;
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, cache) = layer.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);

        let x = Tensor::from_vec(vec![-1.0, 2.0]).unwrap();
        let (_, cache2) = layer.forward(&x, Mode::Train, &mut rng()).unwrap();
        let g = Tensor::from_vec(vec![5.0, 5.0]).unwrap();
        assert_eq!(layer.backward(&g, &cache2).unwrap().data(), &[0.0, 5.0]);
        assert!(layer.backward(&g, &cache).is_err());
    }

    #[test]
    fn backward_with_wrong_cache_is_usage_error() {
        let mut dense = Layer::Dense(Dense::<f64>::identity(2));
        let cache = Cache::Flatten { input_shape: vec![1, 2] };
        let g = Tensor::zeros(&[1, 2]).unwrap();
        assert!(matches!(dense.backward(&g, &cache), Err(Error::Usage(_))));
    }

    #[test]
    fn flatten_preserves_count() {
        let mut layer = Layer::<f64>::Flatten;
        let x = random(&[2, 3, 3, 2], 1);
        let (y, cache) = layer.forward(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[2, 18]);
        assert_eq!(y.data(), x.data());
        let back = layer.backward(&y, &cache).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn gradcheck_dense() {
        let mut r = rng();
        let layer = Layer::Dense(Dense::new(4, 3, &mut r).unwrap());
        assert_grad_ok(check_layer(layer, &random(&[3, 4], 2), Mode::Train, 11).unwrap());
    }

    #[test]
    fn gradcheck_relu() {
        assert_grad_ok(check_layer(Layer::Relu, &random(&[3, 4], 3), Mode::Train, 11).unwrap());
    }

    #[test]
    fn gradcheck_flatten() {
        assert_grad_ok(check_layer(Layer::Flatten, &random(&[2, 2, 3, 2], 4), Mode::Train, 11).unwrap());
    }

    #[test]
    fn gradcheck_conv() {
        let mut r = rng();
        let layer = Layer::Conv2D(Conv2D::new(3, 3, 2, 3, &mut r).unwrap());
        assert_grad_ok(check_layer(layer, &random(&[2, 4, 5, 2], 5), Mode::Train, 11).unwrap());
    }

    #[test]
    fn gradcheck_maxpool() {
        let layer = Layer::MaxPool2D(MaxPool2D::new(2, 2).unwrap());
        assert_grad_ok(check_layer(layer, &random(&[2, 4, 5, 3], 6), Mode::Train, 11).unwrap());
    }

    #[test]
    fn gradcheck_batchnorm_train() {
        let mut bn = BatchNorm::new(3);
        bn.gamma.value_mut().data_mut().copy_from_slice(&[1.5, -0.7, 0.3]);
        bn.beta.value_mut().data_mut().copy_from_slice(&[0.1, 0.2, -0.3]);
        let layer = Layer::BatchNorm(bn.clone());
        assert_grad_ok(check_layer(layer, &random(&[5, 3], 7), Mode::Train, 11).unwrap());
        let layer = Layer::BatchNorm(bn);
        assert_grad_ok(check_layer(layer, &random(&[2, 3, 2, 3], 8), Mode::Train, 11).unwrap());
    }

    #[test]
    fn gradcheck_batchnorm_eval() {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.running_mean.data_mut().copy_from_slice(&[0.2, -0.1, 0.4]);
        bn.running_var.data_mut().copy_from_slice(&[0.5, 2.0, 1.3]);
        assert_grad_ok(check_layer(Layer::BatchNorm(bn), &random(&[4, 3], 9), Mode::Eval, 11).unwrap());
    }

    #[test]
    fn gradcheck_dropout_fixed_mask() {
        let layer = Layer::Dropout(Dropout::new(0.3).unwrap());
        assert_grad_ok(check_layer(layer, &random(&[4, 5], 10), Mode::Train, 11).unwrap());
    }

    #[test]
    fn param_order_and_freeze() {
        let mut r = rng();
        let mut layer = Layer::Conv2D(Conv2D::<f64>::new(3, 3, 1, 2, &mut r).unwrap());
        assert!(!layer.is_frozen());
        layer.set_frozen(true);
        let params = layer.params_mut();
        assert_eq!(params.len(), 2);
        assert!(params.iter().all(|(_, frozen)| *frozen));
        assert_eq!(params[0].0.value().shape(), &[3, 3, 1, 2]);
    }

    #[test]
    fn layer_serde_round_trip_is_bit_exact() {
        let mut r = rng();
        let layer = Layer::Dense(Dense::<f64>::new(3, 2, &mut r).unwrap());
        let json = serde_json::to_string(&layer).unwrap();
        let back: Layer<f64> = serde_json::from_str(&json).unwrap();
        match (&layer, &back) {
            (Layer::Dense(a), Layer::Dense(b)) => {
                assert_eq!(a.weights.value(), b.weights.value());
                assert_eq!(a.bias.value(), b.bias.value());
            }
            _ => panic!("kind changed"),
        }
    }
}
