//! Simulation of coded caching with cache-enabled transmitters and
//! receivers under full, delayed and mixed channel knowledge.

pub mod cli;
pub mod delayed_csit;
pub mod dof;
pub mod error;
pub mod field;
pub mod full_csit;
pub mod log;
pub mod mixed;
pub mod model;
pub mod placement;
pub mod ratio;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
