//! Train small fully convolutional networks on image-to-image tasks and
//! measure the geometry of the minimizers they reach.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the command-line tool uses.

pub mod cli;
pub mod data;
pub mod error;
pub mod landscape;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type ParamSet = models::ParamSet<f64>;
pub type ParamSet32 = models::ParamSet<f32>;
pub type Dataset = data::Dataset<f64>;
pub type ImagePair = data::ImagePair<f64>;
pub type DirectionPair = landscape::DirectionPair<f64>;
pub type LossSurface = landscape::LossSurface<f64>;
