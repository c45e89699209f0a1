//! Continual graph learning engine.
//!
//! A small graph convolutional network is trained across a stream of
//! class-incremental tasks. Forgetting is countered with experience replay
//! plus local and global structure distillation against the previous task's
//! frozen model. The crate is organised bottom-up:
//!
//! * [`graph`]: graph data model, task streams, document-graph construction
//!   and the `graphcl-v1` dataset format.
//! * [`nn`]: dense kernels with hand-derived gradients, Adam and a
//!   finite-difference gradient checker.
//! * [`model`]: the GCN itself (input projection, three residual GCN layers,
//!   weighted-sum-and-max readout, expanding head) and checkpoints.
//! * [`continual`]: replay buffer, loss terms, EWC and the training loop.
//! * [`metrics`]: accuracy matrices, AP and AF.
//! * [`bench`]: experiment configs, synthetic datasets and result emission.

pub mod bench;
pub mod continual;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
