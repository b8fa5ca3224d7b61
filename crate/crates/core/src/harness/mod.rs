//! Data generation, configuration, storage and experiment drivers.

pub mod arrayfile;
pub mod checks;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod fiber;
pub mod grf;
pub mod rng;
