//! File formats, verification drivers and the command line for `imamba-core`.
//!
//! Everything that touches the file system or the environment lives here:
//! the IMTN tensor encoding, IMWT weight files, JSON model configs, feature
//! map dumps, and the multi-threaded gradient path used by `train-toy`.

pub mod bench;
pub mod checks;
pub mod cli;
mod error;
pub mod features;
pub mod imtn;
pub mod parallel;
pub mod weights;

pub use error::{Error, Result};
pub use imamba_core as core;
