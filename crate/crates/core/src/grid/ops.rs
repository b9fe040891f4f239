use super::{Grid, ScalarBc, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::linsolve::{CsrMatrix, TripletBuilder};
use crate::real::Real;

/// Face-centered difference quotient of a cell field.
///
/// Only interior faces are produced; under the Neumann-zero mirror the
/// boundary-face gradient vanishes, which is what the dropped faces encode.
pub fn gradient<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    let g = *f.grid();
    let v = f.values();
    let mut out = VectorField::zeros(g);
    for axis in 0..g.dim() {
        let inv_h = T::one() / g.h(axis);
        let comp = out.comp_mut(axis);
        for (idx, c) in comp.iter_mut().enumerate() {
            let (lo, hi) = g.face_cells(axis, idx);
            *c = (v[hi] - v[lo]) * inv_h;
        }
    }
    out
}

/// Cell-centered flux difference of a face field with zero wall fluxes.
pub fn divergence<T: Real>(v: &VectorField<T>) -> ScalarField<T> {
    let g = *v.grid();
    let mut out = vec![T::zero(); g.n_cells()];
    for axis in 0..g.dim() {
        let inv_h = T::one() / g.h(axis);
        for (idx, &flux) in v.comp(axis).iter().enumerate() {
            let (lo, hi) = g.face_cells(axis, idx);
            out[lo] += flux * inv_h;
            out[hi] -= flux * inv_h;
        }
    }
    ScalarField::from_raw(g, out, ScalarBc::None)
}

/// Arithmetic average of the two cells adjacent to each interior face.
pub fn face_average<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    let g = *f.grid();
    let v = f.values();
    let half = T::lit(0.5);
    let mut out = VectorField::zeros(g);
    for axis in 0..g.dim() {
        for (idx, c) in out.comp_mut(axis).iter_mut().enumerate() {
            let (lo, hi) = g.face_cells(axis, idx);
            *c = half * (v[lo] + v[hi]);
        }
    }
    out
}

/// Discrete Laplacian with homogeneous Neumann walls, `divergence(gradient(f))`.
pub fn laplacian_neumann<T: Real>(f: &ScalarField<T>) -> Result<ScalarField<T>> {
    if f.bc() != ScalarBc::NeumannZero {
        return Err(Error::BoundaryTag {
            expected: ScalarBc::NeumannZero.name(),
            found: f.bc().name(),
        });
    }
    Ok(divergence(&gradient(f)).with_bc(ScalarBc::NeumannZero))
}

/// The Neumann Laplacian as a sparse matrix acting on cell values.
pub fn laplacian_matrix<T: Real>(grid: &Grid<T>) -> CsrMatrix<T> {
    let n = grid.n_cells();
    let mut b = TripletBuilder::new(n, n);
    for (axis, _, lo, hi) in grid.faces() {
        let w = T::one() / (grid.h(axis) * grid.h(axis));
        b.push(lo, hi, w);
        b.push(lo, lo, -w);
        b.push(hi, lo, w);
        b.push(hi, hi, -w);
    }
    b.build()
}
