//! Minimal reverse-mode differentiation over the handful of tensor operations
//! the matcher and its losses need.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably, records every operation in
//! creation order and replays the records backwards. Parameters are never
//! copied into the graph, so forward passes over frozen parameters can run from
//! many threads at once.

mod gradcheck;
mod graph;
mod init;
mod optim;
mod params;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GroupError};
pub use graph::{Activation, Graph, NodeId};
pub use init::{glorot_uniform, uniform_fill};
pub use optim::AdaGrad;
pub use params::{Grads, Param, ParamId, ParamStore};
