//! Learning with noisy labels through a causal transition model.
//!
//! The crate is `no_std` with `alloc`. It contains a small reverse-mode
//! autodiff engine, the four learnable components (separation model,
//! classifier, policy model, transition model), the training objectives,
//! label-noise synthesis, the twin-network training loop, a semi-supervised
//! variant, evaluation metrics and an exact enumeration oracle over finite
//! structural causal models. File formats, plotting and the command line live
//! in the `labelnoise` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod causal;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod models;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod semi;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
