//! Statistical identification of the hyperparameters of a random
//! plane-stress compliance field from strain-field observations.

pub mod error;
pub mod linalg;
pub mod special;
pub mod rng;
pub mod randfield;
pub mod fem;
pub mod qoi;
pub mod stats;
pub mod forward;
pub mod database;
pub mod ann;
pub mod robustness;
pub mod par;

pub use error::{Error, Result};
