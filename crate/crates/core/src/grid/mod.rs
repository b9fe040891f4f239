//! Uniform staggered (MAC) grid on an axis-aligned interval or rectangle.
//!
//! Scalars (density, concentration, chemical potential) live at cell centers.
//! Vector quantities live on interior faces, one component per axis; the
//! boundary faces carry the no-slip value zero and are never stored.
//!
//! Cells are numbered row-major with the x index running fastest:
//! `cell = j * nx + i`.

mod field;
pub(crate) mod io;
mod ops;

pub use field::{ScalarBc, ScalarField, VectorField};
pub use io::{read_scalar_binary, write_scalar_binary, write_scalar_csv, FIELD_MAGIC};
pub use ops::{divergence, face_average, gradient, laplacian_matrix, laplacian_neumann};

use crate::error::{Error, Result};
use crate::real::Real;

/// Structured grid on `[0, Lx]` or `[0, Lx] x [0, Ly]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    cells: [usize; 2],
    lengths: [T; 2],
    spacing: [T; 2],
}

impl<T: Real> Grid<T> {
    pub fn new_1d(cells: usize, length: T) -> Result<Self> {
        Self::new(&[cells], &[length])
    }

    pub fn new_2d(cells: [usize; 2], lengths: [T; 2]) -> Result<Self> {
        Self::new(&cells, &lengths)
    }

    /// Builds a 1D or 2D grid; `cells` and `lengths` must have the same length.
    pub fn new(cells: &[usize], lengths: &[T]) -> Result<Self> {
        let dim = cells.len();
        if !(1..=2).contains(&dim) || lengths.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2 with one length per axis (got {} cell counts, {} lengths)",
                cells.len(),
                lengths.len()
            )));
        }
        let mut c = [1usize; 2];
        let mut l = [T::one(); 2];
        let mut h = [T::one(); 2];
        for k in 0..dim {
            if cells[k] < 2 {
                return Err(Error::InvalidGrid(format!("axis {k} needs at least 2 cells")));
            }
            if !(lengths[k] > T::zero()) || !lengths[k].is_finite() {
                return Err(Error::InvalidGrid(format!("axis {k} length must be positive")));
            }
            c[k] = cells[k];
            l[k] = lengths[k];
            h[k] = lengths[k] / T::from_usize_lossy(cells[k]);
        }
        Ok(Self {
            dim,
            cells: c,
            lengths: l,
            spacing: h,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    /// Number of cells along y; 1 on a 1D grid.
    #[inline]
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[T] {
        &self.spacing[..self.dim]
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths[..self.dim]
    }

    #[inline]
    pub fn h(&self, axis: usize) -> T {
        self.spacing[axis]
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Cell volume (length in 1D, area in 2D). Dual cells around faces have the same volume.
    #[inline]
    pub fn cell_volume(&self) -> T {
        (0..self.dim).fold(T::one(), |v, k| v * self.spacing[k])
    }

    /// Measure of the domain.
    pub fn domain_volume(&self) -> T {
        (0..self.dim).fold(T::one(), |v, k| v * self.lengths[k])
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    /// Cell-center coordinates `[x, y]` (y = 0 in 1D).
    pub fn cell_center(&self, i: usize, j: usize) -> [T; 2] {
        let half = T::lit(0.5);
        let y = if self.dim == 2 {
            (T::from_usize_lossy(j) + half) * self.spacing[1]
        } else {
            T::zero()
        };
        [(T::from_usize_lossy(i) + half) * self.spacing[0], y]
    }

    pub fn cell_center_of(&self, cell: usize) -> [T; 2] {
        self.cell_center(cell % self.cells[0], cell / self.cells[0])
    }

    /// Number of interior faces normal to `axis`.
    pub fn n_faces(&self, axis: usize) -> usize {
        match (axis, self.dim) {
            (0, _) => (self.cells[0] - 1) * self.cells[1],
            (1, 2) => self.cells[0] * (self.cells[1] - 1),
            _ => 0,
        }
    }

    /// Index of the interior x-face `i_face` (1..nx) in row `j`.
    #[inline]
    pub fn x_face(&self, i_face: usize, j: usize) -> usize {
        j * (self.cells[0] - 1) + i_face - 1
    }

    /// Index of the interior y-face `j_face` (1..ny) in column `i`.
    #[inline]
    pub fn y_face(&self, i: usize, j_face: usize) -> usize {
        (j_face - 1) * self.cells[0] + i
    }

    /// Cells on the low and high side of interior face `idx` normal to `axis`.
    pub fn face_cells(&self, axis: usize, idx: usize) -> (usize, usize) {
        let nx = self.cells[0];
        if axis == 0 {
            let j = idx / (nx - 1);
            let i_face = idx % (nx - 1) + 1;
            (self.cell_index(i_face - 1, j), self.cell_index(i_face, j))
        } else {
            let j_face = idx / nx + 1;
            let i = idx % nx;
            (self.cell_index(i, j_face - 1), self.cell_index(i, j_face))
        }
    }

    /// Position of the center of interior face `idx` normal to `axis`.
    pub fn face_center(&self, axis: usize, idx: usize) -> [T; 2] {
        let (lo, hi) = self.face_cells(axis, idx);
        let a = self.cell_center_of(lo);
        let b = self.cell_center_of(hi);
        let half = T::lit(0.5);
        [(a[0] + b[0]) * half, (a[1] + b[1]) * half]
    }

    /// Iterates `(axis, face index, low cell, high cell)` over all interior faces.
    pub fn faces(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.dim).flat_map(move |axis| {
            (0..self.n_faces(axis)).map(move |f| {
                let (lo, hi) = self.face_cells(axis, f);
                (axis, f, lo, hi)
            })
        })
    }

    /// Converts the grid to another scalar type.
    pub fn cast<U: Real>(&self) -> Grid<U> {
        let lengths: Vec<U> = self.lengths().iter().map(|l| U::lit(l.to_f64_lossy())).collect();
        Grid::new(self.cells_per_axis(), &lengths).expect("cast of a valid grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_is_length_over_cells() {
        let g = Grid::new_2d([8, 4], [2.0, 3.0]).unwrap();
        assert_eq!(g.h(0), 2.0 / 8.0);
        assert_eq!(g.h(1), 3.0 / 4.0);
        assert_eq!(g.n_cells(), 32);
        assert_eq!(g.n_faces(0), 7 * 4);
        assert_eq!(g.n_faces(1), 8 * 3);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::<f64>::new(&[4, 4, 4], &[1.0, 1.0, 1.0]).is_err());
        assert!(Grid::<f64>::new_1d(1, 1.0).is_err());
        assert!(Grid::<f64>::new_1d(4, 0.0).is_err());
        assert!(Grid::<f64>::new(&[4], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn face_cells_are_neighbors() {
        let g = Grid::new_2d([5, 3], [1.0f64, 1.0]).unwrap();
        for (axis, f, lo, hi) in g.faces() {
            let step = if axis == 0 { 1 } else { g.nx() };
            assert_eq!(hi - lo, step, "axis {axis} face {f}");
            let c = g.face_center(axis, f);
            let a = g.cell_center_of(lo);
            assert!((c[axis] - a[axis] - 0.5 * g.h(axis)).abs() < 1e-14);
        }
    }
}
