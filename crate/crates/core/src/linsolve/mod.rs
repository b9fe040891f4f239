//! Sparse matrices, a preconditioned BiCGStab solver and a damped Newton driver.

mod bicgstab;
mod newton;
mod sparse;

pub use bicgstab::{bicgstab, KrylovConfig, KrylovReport, Preconditioner};
pub use newton::{newton_solve, NewtonConfig, NewtonReport};
pub use sparse::{CsrMatrix, TripletBuilder};
