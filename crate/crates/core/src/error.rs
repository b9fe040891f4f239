use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("fields live on different grids")]
    GridMismatch,

    #[error("operator requires boundary tag {expected}, field is tagged {found}")]
    BoundaryTag {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{what} = {value} outside its domain ({domain})")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative density {value} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{solver} breakdown at iteration {iterations} (residual {residual:e})")]
    Breakdown {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite residual in {0}")]
    NonFinite(&'static str),

    #[error("CFL violated: number {cfl:.4} exceeds {limit}; retry with dt <= {proposed_dt:e}")]
    Cfl {
        cfl: f64,
        limit: f64,
        proposed_dt: f64,
    },

    #[error("energy inequality violated at step {step}: excess {excess:e} above tolerance {tolerance:e}")]
    EnergyViolation {
        step: usize,
        excess: f64,
        tolerance: f64,
    },

    #[error("phase step failed: {0}")]
    PhaseStep(Box<Error>),

    #[error("momentum step failed: {0}")]
    MomentumStep(Box<Error>),

    #[error("initial data rejected: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Inadmissible(Vec<crate::state::Violation>),

    #[error("invalid test function: {0}")]
    TestFunction(String),

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
