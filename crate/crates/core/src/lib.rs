//! Gradient-boosted deep neural networks.
//!
//! A boosted model is an additive ensemble of regression networks. Each
//! stage is a copy of the previous stage's network with its dense hidden
//! layers frozen and one fresh dense layer appended; it is fitted with a
//! square loss to the pseudo-residuals `y - softmax(F)` of the running
//! ensemble output `F`. A per-class line search then rescales the stage's
//! output head, shrinkage is applied, and the stage is added to `F`.
//!
//! With a convolutional feature stack in front of the dense layers the
//! convolutional layers stay trainable across stages (GB-CNN); without it
//! only the newest dense layer and the output head train (GB-DNN).
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the reference `f64` configuration.

pub mod boosting;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod persist;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` tensor, the reference scalar type.
pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Layer = layers::Layer<f64>;
pub type Sequential = network::Sequential<f64>;
pub type Sequential32 = network::Sequential<f32>;
pub type Dataset = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
