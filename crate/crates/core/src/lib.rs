//! A desk-scale laboratory for input-space mode connectivity of neural
//! classifiers.
//!
//! The crate trains small dense/convolutional networks with exact gradients,
//! samples loss curves along piecewise-linear input paths, bypasses loss
//! barriers by constrained optimization, synthesizes class-optimal inputs,
//! generates adversarial examples, detects them from loss-curve features, and
//! studies the connectivity geometry with lattice percolation simulations and
//! a mean-field fixed point.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod net;
pub mod paths;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
