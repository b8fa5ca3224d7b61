//! Shared fixtures for the criterion benches.

use vol_core::harness::config::{model_for_problem, DataConfig};
use vol_core::harness::dataset::generate_sample;
use vol_core::physics::problem_factory;
use vol_core::{ModelConfig, ParameterField, Problem, ProblemKind};

/// A sampled problem instance and its model input.
pub struct Fixture {
    pub problem: Problem,
    pub input: ParameterField,
}

pub fn fixture(kind: ProblemKind, resolution: usize) -> Fixture {
    let data = DataConfig {
        problem: kind,
        resolution,
        ..DataConfig::default()
    };
    let disc = kind.discretization(resolution).expect("valid resolution");
    let gs = generate_sample(&data, &disc, 11, 0).expect("sample");
    let problem = problem_factory(kind, disc, &gs.physics, &data.physics).expect("problem");
    Fixture {
        problem,
        input: gs.input,
    }
}

/// Desk-scale surrogate used throughout the experiments.
pub fn desk_model(kind: ProblemKind) -> ModelConfig {
    model_for_problem(
        kind,
        &ModelConfig {
            hidden_channels: 16,
            n_layers: 5,
            kernel_extent: 3,
            dilation_base: 2,
            ..ModelConfig::default()
        },
    )
}
