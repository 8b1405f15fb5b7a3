//! Compressed-sensing recovery of low-rank positive-semidefinite matrices,
//! specialized to quantum state tomography.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod hermitian;
pub mod measurement;
pub mod rng;
pub mod sensing;

pub use error::{Error, Result};
pub use hermitian::HermitianMatrix;
