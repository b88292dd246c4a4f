//! Simulation of low-precision training: fixed-point and block-floating-point
//! quantizers with stochastic rounding, low-precision SGD, stochastic weight
//! averaging over low-precision iterates (SWALP), closed-form convergence
//! bound evaluators and an experiment harness.

pub mod bounds;
pub mod data;
pub mod error;
pub mod harness;
pub mod models;
pub mod optim;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use models::{Objective, QuantizerSet};
pub use quant::{BlockAssignment, BlockFloatFormat, FixedPointFormat, QuantizerSpec, RoundingMode};
pub use rng::RngStream;
pub use tensor::Tensor;
