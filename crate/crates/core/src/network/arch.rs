use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sequential;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2D, Dense, Dropout, Layer, MaxPool2D};
use crate::scalar::Scalar;

/// Convolutional feature extractor made of repeated blocks:
/// `convs_per_block x (Conv + ReLU)`, optional batch norm, max pooling and
/// dropout. A flatten layer follows the last block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvStack {
    /// Output channels of each block.
    pub filters: Vec<usize>,
    pub convs_per_block: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Dropout rate of each block; same length as `filters`.
    pub dropout: Vec<f64>,
    pub batch_norm: bool,
}

impl Default for ConvStack {
    fn default() -> Self {
        Self {
            filters: vec![32, 64, 128],
            convs_per_block: 2,
            kernel: 3,
            pool: 2,
            dropout: vec![0.2, 0.3, 0.4],
            batch_norm: true,
        }
    }
}

impl ConvStack {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::Config("conv filters must be a non-empty list of positive counts".into()));
        }
        if self.dropout.len() != self.filters.len() {
            return Err(Error::Config(format!(
                "conv dropout lists {} rates for {} blocks",
                self.dropout.len(),
                self.filters.len()
            )));
        }
        if self.convs_per_block == 0 || self.kernel == 0 || self.pool == 0 {
            return Err(Error::Config("convs_per_block, kernel and pool must be positive".into()));
        }
        Ok(())
    }

    fn layers<T: Scalar, R: Rng + ?Sized>(&self, mut channels: usize, rng: &mut R) -> Result<Vec<Layer<T>>> {
        self.validate()?;
        let mut layers = Vec::new();
        for (&filters, &rate) in self.filters.iter().zip(&self.dropout) {
            for _ in 0..self.convs_per_block {
                layers.push(Layer::Conv2D(Conv2D::new(self.kernel, self.kernel, channels, filters, rng)?));
                layers.push(Layer::Relu);
                channels = filters;
            }
            if self.batch_norm {
                layers.push(Layer::BatchNorm(BatchNorm::new(filters)));
            }
            layers.push(Layer::MaxPool2D(MaxPool2D::new(self.pool, self.pool)?));
            layers.push(Layer::Dropout(Dropout::new(rate)?));
        }
        layers.push(Layer::Flatten);
        Ok(layers)
    }
}

/// Builds `[conv stack] -> [flatten] -> (Dense + ReLU) per hidden width -> linear head(k)`.
///
/// Hidden layers use a fan-in scaled uniform init; the head starts at zero.
/// Without a conv stack, inputs of rank > 1 are flattened first.
pub fn build_network<T: Scalar, R: Rng + ?Sized>(
    input_shape: &[usize],
    conv: Option<&ConvStack>,
    hidden: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<Sequential<T>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 outputs, got {k}")));
    }
    let mut layers = match conv {
        Some(stack) => match input_shape {
            &[_, _, c] => stack.layers(c, rng)?,
            _ => {
                return Err(Error::Config(format!(
                    "a conv stack needs height x width x channels inputs, got {input_shape:?}"
                )))
            }
        },
        None if input_shape.len() > 1 => vec![Layer::Flatten],
        None => Vec::new(),
    };

    let mut shape = vec![1];
    shape.extend_from_slice(input_shape);
    for layer in &layers {
        shape = layer.output_shape(&shape)?;
    }
    let mut width = shape[1];
    for &h in hidden {
        if h == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        layers.push(Layer::Dense(Dense::new(width, h, rng)?));
        layers.push(Layer::Relu);
        width = h;
    }
    let head = Dense::zeros(width, k)?;
    Sequential::new(input_shape.to_vec(), layers, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_stack_on_mnist_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = build_network::<f32, _>(&[28, 28, 1], Some(&ConvStack::default()), &[20], 10, &mut rng).unwrap();
        let kinds: Vec<&str> = net.layers().iter().map(|l| l.kind()).collect();
        assert_eq!(&kinds[..7], ["conv2d", "relu", "conv2d", "relu", "batchnorm", "maxpool2d", "dropout"]);
        // 28 -> 14 -> 7 -> 3 spatial, 128 channels.
        match &net.layers()[kinds.len() - 2] {
            Layer::Dense(d) => assert_eq!(d.inputs(), 3 * 3 * 128),
            other => panic!("expected dense, got {}", other.kind()),
        }
        assert_eq!(net.num_outputs(), 10);
    }

    #[test]
    fn mismatched_dropout_list_rejected() {
        let stack = ConvStack { dropout: vec![0.2], ..ConvStack::default() };
        assert!(stack.validate().is_err());
    }

    #[test]
    fn image_input_without_conv_is_flattened() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = build_network::<f64, _>(&[3, 3, 1], None, &[4], 2, &mut rng).unwrap();
        assert_eq!(net.layers()[0].kind(), "flatten");
    }
}
