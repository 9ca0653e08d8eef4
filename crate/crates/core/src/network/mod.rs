//! Sequential networks with a linear output head, their optimizer and
//! training loops, and the copy-and-grow step used by boosting.

mod arch;
mod grow;
pub mod loss;
mod optim;
mod train;

pub use arch::{build_network, ConvStack};
pub use grow::clone_and_grow;
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use train::{fit_classification_joint, fit_regression, EpochStats, TrainConfig, TrainLog};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Cache, Dense, Layer, Mode, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered layers followed by a linear output head of width `K`.
///
/// `input_shape` is the per-sample shape (without the batch axis).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Sequential<T: Scalar> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    head: Dense<T>,
}

/// Caches from one forward pass, head last.
#[derive(Debug, Clone)]
pub struct ForwardCaches<T: Scalar> {
    layers: Vec<Cache<T>>,
    head: Cache<T>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>, head: Dense<T>) -> Result<Self> {
        let net = Self { input_shape, layers, head };
        net.feature_shape()?;
        Ok(net)
    }

    /// Per-sample shape entering the head; checks that the layers compose.
    fn feature_shape(&self) -> Result<Vec<usize>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        self.head.output_shape(&shape)?;
        Ok(shape[1..].to_vec())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_outputs(&self) -> usize {
        self.head.outputs()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn head(&self) -> &Dense<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Dense<T> {
        &mut self.head
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![x.shape().first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::Dimension {
                op: "network input",
                left: x.shape().to_vec(),
                right: expected,
            });
        }
        Ok(())
    }

    /// Forward pass returning raw (pre-softmax) outputs and backward caches.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ForwardCaches<T>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(&h, mode, rng)?;
            caches.push(cache);
            h = out;
        }
        let out = self.head.apply(&h)?;
        Ok((out, ForwardCaches { layers: caches, head: Cache::Dense { input: h } }))
    }

    /// Eval-mode raw outputs; leaves the network untouched.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        self.head.apply(&h)
    }

    /// [`Sequential::predict`] over row chunks of at most `chunk` samples.
    pub fn predict_batched(&self, x: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        let n = x.rows();
        let chunk = chunk.max(1);
        if n <= chunk {
            return self.predict(x);
        }
        let k = self.num_outputs();
        let mut out = Vec::with_capacity(n * k);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let idx: Vec<usize> = (start..end).collect();
            out.extend_from_slice(self.predict(&x.select_rows(&idx)?)?.data());
            start = end;
        }
        Tensor::new(vec![n, k], out)
    }

    /// Backpropagates `grad_out` (gradient w.r.t. raw outputs), accumulating
    /// parameter gradients. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: &Tensor<T>, caches: &ForwardCaches<T>) -> Result<Tensor<T>> {
        if caches.layers.len() != self.layers.len() {
            return Err(Error::Usage("caches do not belong to this network".into()));
        }
        let head_input = match &caches.head {
            Cache::Dense { input } => input,
            _ => return Err(Error::Usage("missing head cache".into())),
        };
        let mut g = self.head.backward(head_input, grad_out)?;
        for (layer, cache) in self.layers.iter_mut().zip(&caches.layers).rev() {
            g = layer.backward(&g, cache)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
        self.head.weights.zero_grad();
        self.head.bias.zero_grad();
    }

    /// Every parameter in a fixed order (layers first, head last) with its frozen flag.
    pub fn params_mut(&mut self) -> Vec<(&mut Param<T>, bool)> {
        let mut out: Vec<(&mut Param<T>, bool)> = Vec::new();
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        let frozen = self.head.frozen;
        out.push((&mut self.head.weights, frozen));
        out.push((&mut self.head.bias, frozen));
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.layers.iter().flat_map(|l| l.params()).collect();
        out.push(&self.head.weights);
        out.push(&self.head.bias);
        out
    }

    pub fn trainable_count(&self) -> usize {
        let layer_params: usize = self
            .layers
            .iter()
            .filter(|l| !l.is_frozen())
            .flat_map(|l| l.params())
            .map(|p| p.value().len())
            .sum();
        let head = if self.head.frozen {
            0
        } else {
            self.head.weights.value().len() + self.head.bias.value().len()
        };
        layer_params + head
    }

    /// Indices of hidden dense layers (the head is not included).
    pub fn dense_hidden_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Dense(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        for layer in &mut self.layers {
            layer.set_frozen(frozen);
        }
        self.head.frozen = frozen;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{numeric_gradient, random_tensor, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stack_identity_head() {
        let net = Sequential::<f64>::new(vec![3], vec![], Dense::identity(3)).unwrap();
        let x = random_tensor(&[4, 3], 1);
        assert_eq!(net.predict(&x).unwrap(), x);
        let mut net = net;
        let (y, _) = net.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn frozen_identity_layer_then_identity_head() {
        let mut d = Dense::identity(3);
        d.frozen = true;
        let net = Sequential::<f64>::new(vec![3], vec![Layer::Dense(d)], Dense::identity(3)).unwrap();
        let x = random_tensor(&[2, 3], 2);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = ConvStack { filters: vec![2], dropout: vec![0.3], ..ConvStack::default() };
        let mut net = build_network::<f64, _>(&[6, 6, 1], Some(&conv), &[5], 3, &mut rng).unwrap();
        let x = random_tensor(&[4, 6, 6, 1], 4);
        let a = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0;
        let b = net.forward(&x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(10)).unwrap().0;
        assert_eq!(a.data(), b.data());
        assert_eq!(net.predict(&x).unwrap().data(), a.data());
        assert_eq!(net.predict_batched(&x, 3).unwrap().data(), a.data());
    }

    #[test]
    fn rejects_mismatched_input() {
        let net = Sequential::<f64>::new(vec![3], vec![], Dense::identity(3)).unwrap();
        assert!(matches!(
            net.predict(&Tensor::zeros(&[2, 4]).unwrap()),
            Err(Error::Dimension { .. })
        ));
        let bad = Sequential::<f64>::new(vec![4], vec![], Dense::identity(3));
        assert!(bad.is_err());
    }

    /// Whole-network check on `Dense -> ReLU -> Dense -> ReLU -> head` with a
    /// cross-entropy objective.
    #[test]
    fn two_dense_layer_network_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = build_network::<f64, _>(&[4], None, &[5, 3], 3, &mut rng).unwrap();
        // The head starts at zero, which would zero every hidden gradient.
        for (p, _) in net.params_mut() {
            for v in p.value_mut().data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let x = random_tensor(&[6, 4], 6);
        let labels = Tensor::from_rows(&[
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
        ])
        .unwrap();

        let mut analytic = net.clone();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (out, caches) = analytic.forward(&x, Mode::Train, &mut r).unwrap();
        let g = loss::cross_entropy_grad(&out, &labels).unwrap();
        analytic.backward(&g, &caches).unwrap();
        let grads: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.grad().to_vec()).collect();

        let values: Vec<Vec<f64>> = net.params().iter().map(|p| p.value().data().to_vec()).collect();
        let mut worst = 0.0f64;
        for (pi, v) in values.iter().enumerate() {
            let numeric = numeric_gradient(
                |p| {
                    let mut n = net.clone();
                    n.params_mut()[pi].0.value_mut().data_mut().copy_from_slice(p);
                    loss::cross_entropy(&n.predict(&x).unwrap(), &labels).unwrap()
                },
                v,
            );
            for (&a, &b) in grads[pi].iter().zip(&numeric) {
                worst = worst.max(relative_error(a, b));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
