use rand::Rng;

use super::Sequential;
use crate::error::{Error, Result};
use crate::layers::{Dense, Layer};
use crate::scalar::Scalar;

/// Deep-copies `net`, freezes its dense hidden layers, inserts a fresh
/// `Dense(hidden_width) + ReLU` after the last dense hidden layer and
/// attaches a fresh zero-initialized linear head with the same number of
/// outputs.
///
/// Layers other than dense ones keep their frozen flags, so a convolutional
/// stack stays trainable. The source network is not modified.
pub fn clone_and_grow<T: Scalar, R: Rng + ?Sized>(
    net: &Sequential<T>,
    hidden_width: usize,
    rng: &mut R,
) -> Result<Sequential<T>> {
    if hidden_width == 0 {
        return Err(Error::Config("hidden width must be at least 1".into()));
    }
    let mut layers = net.layers().to_vec();
    for layer in &mut layers {
        if let Layer::Dense(d) = layer {
            d.frozen = true;
        }
    }

    let insert_at = match layers.iter().rposition(|l| matches!(l, Layer::Dense(_))) {
        Some(i) if matches!(layers.get(i + 1), Some(Layer::Relu)) => i + 2,
        Some(i) => i + 1,
        None => layers.len(),
    };

    let mut shape = vec![1];
    shape.extend_from_slice(net.input_shape());
    for layer in &layers[..insert_at] {
        shape = layer.output_shape(&shape)?;
    }
    let features = match shape.as_slice() {
        &[_, f] => f,
        _ => {
            return Err(Error::Shape {
                shape,
                reason: "dense layer must follow a flat activation".into(),
            })
        }
    };

    layers.insert(insert_at, Layer::Dense(Dense::new(features, hidden_width, rng)?));
    layers.insert(insert_at + 1, Layer::Relu);
    let head = Dense::zeros(hidden_width, net.num_outputs())?;
    let mut grown = Sequential::new(net.input_shape().to_vec(), layers, head)?;
    grown.zero_grads();
    Ok(grown)
}
