use thiserror::Error;

/// Errors produced by the numerical core and the harness.
#[derive(Debug, Error)]
pub enum VolError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    /// A curvature `xᵀKx` that should be positive was not.
    #[error("solver breakdown at step {step}: curvature {curvature:e} is not positive")]
    Breakdown { step: usize, curvature: f64 },

    #[error("no convergence after {iterations} iterations: relative residual {relative:e}")]
    NotConverged { iterations: usize, relative: f64 },

    #[error("non-finite values: {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("problem size {n_dof} exceeds the dense limit of {limit} dofs")]
    TooLarge { n_dof: usize, limit: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<VolError>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VolError {
    /// Attach a sample index to an error raised while processing one sample.
    pub fn at_sample(self, index: usize) -> Self {
        VolError::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (breakdown, non-SPD systems,
    /// stalled solves, NaN/inf) as opposed to usage or I/O problems.
    pub fn is_numerical(&self) -> bool {
        match self {
            VolError::Breakdown { .. }
            | VolError::NotPositiveDefinite
            | VolError::NotConverged { .. }
            | VolError::NonFinite(_) => true,
            VolError::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, VolError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(VolError::ShapeMismatch(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(VolError::InvalidArgument(msg.into()))
}
