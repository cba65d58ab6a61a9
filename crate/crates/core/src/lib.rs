//! InceptionMamba building blocks without the standard library.
//!
//! Everything here is pure computation over owned buffers: dense tensors and
//! their kernels, state-space scans, a reverse-mode tape, the InceptionMamba
//! layers and presets, static cost accounting and a small training loop.
//! File formats and the command line live in the `imamba` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analyzer;
pub mod config;
mod error;
pub mod fraction;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod ops;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod autodiff;

pub use error::{Error, Result};
pub use fraction::Fraction;
pub use tensor::{Real, Shape, Tensor};
