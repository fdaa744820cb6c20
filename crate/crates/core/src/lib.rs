//! Rank supervised contrastive learning for time series classification.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod pipeline;
pub mod rankloss;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tensorkit;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelState32 = model::ModelState<f32>;
pub type ModelState64 = model::ModelState<f64>;
pub type Dataset32 = data::TimeSeriesDataset<f32>;
pub type Dataset64 = data::TimeSeriesDataset<f64>;
