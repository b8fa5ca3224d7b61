//! Iterative updates, full solves and the dense reference assembly.

pub mod baseline;
pub mod dense;
pub mod iterative;

pub use baseline::{restarted_cg_baseline, BaselineInit, BaselineReport, BaselineSample};
pub use dense::{assemble_dense, dense_solve, DenseSystem, DENSE_DOF_LIMIT};
pub use iterative::{cg_solve, cg_steps, sd_steps, IterationReport, StepRecord};
