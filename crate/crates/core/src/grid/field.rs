use super::Grid;
use crate::error::{Error, Result};
use crate::real::Real;

/// Boundary tag carried by cell-centered fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarBc {
    /// Homogeneous Neumann: zero normal derivative on every wall.
    NeumannZero,
    None,
}

impl ScalarBc {
    pub fn name(self) -> &'static str {
        match self {
            ScalarBc::NeumannZero => "neumann_zero",
            ScalarBc::None => "none",
        }
    }
}

/// Cell-centered scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField<T> {
    grid: Grid<T>,
    values: Vec<T>,
    bc: ScalarBc,
}

impl<T: Real> ScalarField<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>, bc: ScalarBc) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "scalar field has {} values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                what: "field value",
                value: values[k].to_f64_lossy(),
                domain: "finite reals",
            });
        }
        Ok(Self { grid, values, bc })
    }

    pub fn constant(grid: Grid<T>, value: T, bc: ScalarBc) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells()],
            bc,
        }
    }

    pub fn zeros(grid: Grid<T>) -> Self {
        Self::constant(grid, T::zero(), ScalarBc::NeumannZero)
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: Grid<T>, bc: ScalarBc, f: impl Fn(T, T) -> T) -> Self {
        let values = (0..grid.n_cells())
            .map(|k| {
                let [x, y] = grid.cell_center_of(k);
                f(x, y)
            })
            .collect();
        Self { grid, values, bc }
    }

    /// Wraps values that the caller guarantees are finite and sized to the grid.
    pub(crate) fn from_raw(grid: Grid<T>, values: Vec<T>, bc: ScalarBc) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells());
        Self { grid, values, bc }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn bc(&self) -> ScalarBc {
        self.bc
    }

    pub fn with_bc(mut self, bc: ScalarBc) -> Self {
        self.bc = bc;
        self
    }

    /// Midpoint-rule integral over the domain.
    pub fn integral(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.grid.cell_volume()
    }

    /// Midpoint-rule inner product.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(crate::real::dot(&self.values, &other.values) * self.grid.cell_volume())
    }

    pub fn min(&self) -> T {
        self.values.iter().fold(T::infinity(), |a, &b| a.min(b))
    }

    pub fn max(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            bc: self.bc,
        }
    }
}

/// Face-centered vector field with homogeneous Dirichlet (no-slip) boundary values.
///
/// Component `axis` holds one value per interior face normal to that axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    grid: Grid<T>,
    comps: [Vec<T>; 2],
}

impl<T: Real> VectorField<T> {
    pub fn zeros(grid: Grid<T>) -> Self {
        Self {
            grid,
            comps: [vec![T::zero(); grid.n_faces(0)], vec![T::zero(); grid.n_faces(1)]],
        }
    }

    pub fn new(grid: Grid<T>, x: Vec<T>, y: Vec<T>) -> Result<Self> {
        if x.len() != grid.n_faces(0) || y.len() != grid.n_faces(1) {
            return Err(Error::InvalidGrid(format!(
                "vector field has ({}, {}) face values, grid needs ({}, {})",
                x.len(),
                y.len(),
                grid.n_faces(0),
                grid.n_faces(1)
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                what: "face value",
                value: f64::NAN,
                domain: "finite reals",
            });
        }
        Ok(Self { grid, comps: [x, y] })
    }

    /// Samples component `axis` of `f(x, y)` at each interior face center.
    pub fn from_fn(grid: Grid<T>, f: impl Fn(T, T) -> [T; 2]) -> Self {
        let mut v = Self::zeros(grid);
        for axis in 0..grid.dim() {
            for idx in 0..grid.n_faces(axis) {
                let [x, y] = grid.face_center(axis, idx);
                v.comps[axis][idx] = f(x, y)[axis];
            }
        }
        v
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn comp(&self, axis: usize) -> &[T] {
        &self.comps[axis]
    }

    #[inline]
    pub fn comp_mut(&mut self, axis: usize) -> &mut [T] {
        &mut self.comps[axis]
    }

    /// Value on x-face `i_face` (0..=nx) of row `j`, zero on the walls.
    #[inline]
    pub fn x_at(&self, i_face: usize, j: usize) -> T {
        if i_face == 0 || i_face == self.grid.nx() {
            T::zero()
        } else {
            self.comps[0][self.grid.x_face(i_face, j)]
        }
    }

    /// Value on y-face `j_face` (0..=ny) of column `i`, zero on the walls.
    #[inline]
    pub fn y_at(&self, i: usize, j_face: usize) -> T {
        if self.grid.dim() < 2 || j_face == 0 || j_face == self.grid.ny() {
            T::zero()
        } else {
            self.comps[1][self.grid.y_face(i, j_face)]
        }
    }

    /// Flattened face values, x-faces first.
    pub fn to_flat(&self) -> Vec<T> {
        self.comps[0].iter().chain(&self.comps[1]).copied().collect()
    }

    pub fn from_flat(grid: Grid<T>, flat: &[T]) -> Result<Self> {
        let nx = grid.n_faces(0);
        if flat.len() != nx + grid.n_faces(1) {
            return Err(Error::InvalidGrid("flat face vector has wrong length".into()));
        }
        Self::new(grid, flat[..nx].to_vec(), flat[nx..].to_vec())
    }

    pub fn n_faces(&self) -> usize {
        self.comps[0].len() + self.comps[1].len()
    }

    /// Face inner product weighted by the dual-cell volume.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let s = crate::real::dot(&self.comps[0], &other.comps[0])
            + crate::real::dot(&self.comps[1], &other.comps[1]);
        Ok(s * self.grid.cell_volume())
    }

    pub fn max_abs(&self, axis: usize) -> T {
        crate::real::norm_inf(&self.comps[axis])
    }

    /// Per-cell average over each axis of the squared face values.
    ///
    /// Summed over cells this equals the sum over faces of the squared values.
    pub fn squared_to_cells(&self) -> Vec<T> {
        let g = &self.grid;
        let half = T::lit(0.5);
        let mut out = vec![T::zero(); g.n_cells()];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let a = self.x_at(i, j);
                let b = self.x_at(i + 1, j);
                let mut s = half * (a * a + b * b);
                if g.dim() == 2 {
                    let c = self.y_at(i, j);
                    let d = self.y_at(i, j + 1);
                    s += half * (c * c + d * d);
                }
                out[g.cell_index(i, j)] = s;
            }
        }
        out
    }

    /// Arithmetic face-to-cell interpolation of each component.
    pub fn to_cells(&self) -> Vec<[T; 2]> {
        let g = &self.grid;
        let half = T::lit(0.5);
        let mut out = vec![[T::zero(); 2]; g.n_cells()];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let vx = half * (self.x_at(i, j) + self.x_at(i + 1, j));
                let vy = if g.dim() == 2 {
                    half * (self.y_at(i, j) + self.y_at(i, j + 1))
                } else {
                    T::zero()
                };
                out[g.cell_index(i, j)] = [vx, vy];
            }
        }
        out
    }
}
