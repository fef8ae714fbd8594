//! Numerical core for a hybrid-CNN sentence-pair matcher trained with a
//! domain-relationship transfer objective.
//!
//! The crate is `no_std` (it needs `alloc`) so the model, the losses, the
//! covariance update and the retrieval scoring can be embedded anywhere. File
//! formats, checkpoints and the command line live in the `drss` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod check;
pub mod data;
pub mod error;
pub mod hcnn;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod omega;
pub mod real;
pub mod retrieval;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
