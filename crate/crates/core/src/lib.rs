//! Token-graph knowledge distillation at desk scale.
//!
//! A teacher network's penultimate features are cut into patch tokens; a
//! shared random sample of those tokens becomes the nodes of symmetric k-NN
//! graphs with Gaussian edge weights, built for teacher and student alike.
//! The student trains against four objectives: softened-logit distillation,
//! a per-instance contextual-similarity MSE, a local graph-structure KL, and
//! a global InfoNCE over projected token cosines with a warm-up-then-decay
//! temperature. Everything runs on an in-crate f64 tensor library with
//! reverse-mode autodiff whose gradients are finite-difference checked.
//!
//! Entry points:
//! * [`tensor::Tensor`] / [`tensor::Tape`] — values and gradients.
//! * [`train::pretrain_teacher`] / [`train::Distiller`] — the training loop.
//! * [`config::RunConfig`] — the flat key-value run configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod param;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod token;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
