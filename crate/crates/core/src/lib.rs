//! Multi-output Gaussian-process surrogate modeling.

pub mod cli;
pub mod covkernel;
pub mod csvio;
pub mod design;
pub mod error;
pub mod mgp;
pub mod optim;
pub mod plantsim;
pub mod sensitivity;

pub use error::{Error, Result};
