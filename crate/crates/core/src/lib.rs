//! Continual learning on a small reverse-mode autograd core.
//!
//! The crate trains a feed-forward classifier on a stream of tasks and
//! provides the strategies used to limit catastrophic forgetting: embedding
//! regularization with a weighted replay memory, EWC and online EWC, synaptic
//! intelligence, learning without forgetting, GEM and A-GEM. It also carries
//! the R-matrix metrics and a PCA helper for embedding inspection.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, configuration
//! and the command line live in the `driftguard` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pca;
pub mod qpsolve;
pub mod rng;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Architecture, HeadMode, HeadPolicy, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Graph, Tensor, Var};
