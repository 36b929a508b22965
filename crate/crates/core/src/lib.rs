//! Partition-and-navigation neural solver for min-max vehicle routing.
//!
//! The crate is generic over the scalar type (see [`Real`]); the aliases at
//! the bottom fix it to `f32` for training and inference and to `f64` for
//! gradient checking.

pub mod atomic;
pub mod config;
pub mod decoder;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod rollout;
pub mod scalar;
pub mod training;
pub mod tsplib;

pub use error::{Error, Result};
pub use scalar::Real;
pub use config::{EncoderKind, ModelConfig, PeKind};
pub use problems::{Instance, ProblemKind, Route, RouteSet};

/// Single-precision tensor used for training and inference.
pub type Tensor32 = diffcore::Tensor<f32>;
/// Double-precision tensor used for gradient checks.
pub type Tensor64 = diffcore::Tensor<f64>;
pub type Graph32 = diffcore::Graph<f32>;
pub type Graph64 = diffcore::Graph<f64>;
pub type ParamStore32 = diffcore::ParamStore<f32>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Adam32 = diffcore::AdamState<f32>;
