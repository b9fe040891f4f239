//! Compressible Navier–Stokes / Cahn–Hilliard mixtures with a logarithmic
//! (Flory–Huggins) potential on staggered 1D and 2D grids.
//!
//! The numerical core is generic over the scalar type through [`real::Real`];
//! the aliases below fix it to `f64` or `f32`.

pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod linsolve;
pub mod potential;
pub mod real;
pub mod state;
pub mod stepper;
pub mod sweep;
pub mod weakform;

pub use error::{Error, Result};
pub use real::Real;

pub type Grid64 = grid::Grid<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type ScalarField64 = grid::ScalarField<f64>;
pub type ScalarField32 = grid::ScalarField<f32>;
pub type VectorField64 = grid::VectorField<f64>;
pub type VectorField32 = grid::VectorField<f32>;
pub type State64 = state::State<f64>;
pub type State32 = state::State<f32>;
pub type Physics64 = stepper::Physics<f64>;
pub type Physics32 = stepper::Physics<f32>;
pub type Stepper64 = stepper::Stepper<f64>;
pub type Stepper32 = stepper::Stepper<f32>;
pub type Record64 = diagnostics::DiagnosticsRecord<f64>;
pub type Trajectory64 = weakform::Trajectory<f64>;
