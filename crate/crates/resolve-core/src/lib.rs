//! Neuro-vector-symbolic relational learning: a hyperdimensional attention
//! mechanism that superposes object-level features and relational
//! representations through bundling and binding, together with transformer
//! baselines, synthetic relational tasks and a training/benchmark harness.
//!
//! The numeric core is generic over the scalar type (`f32`/`f64`) via
//! [`Scalar`]; concrete aliases live at the crate root.

pub mod attention;
pub mod baselines;
pub mod bench;
pub mod checkpoint;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod layer;
pub mod scalar;
pub mod tasks;
pub mod tensor;
pub mod vsa;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type ParameterStore32 = tensor::ParameterStore<f32>;
pub type ParameterStore64 = tensor::ParameterStore<f64>;
