//! Answer- and region-guided visual question generation.
//!
//! Object regions and a target answer are aligned in a shared latent space, a
//! multi-task auto-encoder predicts which objects the question should refer to,
//! an object graph is learned from the aligned features and encoded with a residual
//! GCN, and an attention decoder (two-LSTM or transformer) writes the question.
//!
//! Numerics are generic over the element type ([`Scalar`], implemented for `f32`
//! and `f64`); the aliases below fix the common instantiations.

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod eval;
pub mod error;
pub mod graphnet;
pub mod hintnet;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use model::{GenerationOutput, Model, ModelSpec};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
