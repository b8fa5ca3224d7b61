//! Variational operator learning on structured Q1 meshes.
//!
//! The crate covers the matrix-free finite element operators, the SD/CG
//! update rules used to build provisional labels, a convolutional surrogate
//! with hand-written reverse mode, the training loop, and the data and
//! experiment harness.

pub mod error;
pub mod field;
pub mod harness;
pub mod matrix_free;
pub mod mesh;
pub mod model;
pub mod physics;
pub mod solvers;
pub mod training;

pub use error::{Result, VolError};
pub use field::{GaussField, NodeField};
pub use matrix_free::MaskSpec;
pub use mesh::{Discretization, PhysicsKind};
pub use model::{ConvModel, ModelConfig, OperatorModel};
pub use physics::{ParameterField, Problem, ProblemConfig, ProblemKind};
pub use solvers::IterationReport;
pub use training::{ShiftStats, Strategy, TrainConfig};
