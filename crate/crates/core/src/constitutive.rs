//! Closures of the momentum balance: pressure, Newtonian viscous stress,
//! capillary (Korteweg) stress, and the pointwise energy density.
//!
//! Tensors are 3x3 with a zero third row and column on 1D/2D grids.

use crate::error::{Error, Result};
use crate::grid::{gradient, Grid, ScalarField, VectorField};
use crate::linsolve::{CsrMatrix, TripletBuilder};
use crate::potential::{flory_huggins, PotentialParams, RegularizedPotential};
use crate::real::Real;

pub type Tensor3<T> = [[T; 3]; 3];

/// A scalar coefficient as a function of concentration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient<T> {
    Constant(T),
    /// `lo + (hi - lo) / (1 + c^2)`: equals `hi` at `c = 0`, tends to `lo` as `|c| -> inf`.
    Rational { lo: T, hi: T },
}

impl<T: Real> Coefficient<T> {
    #[inline]
    pub fn eval(&self, c: T) -> T {
        match *self {
            Coefficient::Constant(v) => v,
            Coefficient::Rational { lo, hi } => lo + (hi - lo) / (T::one() + c * c),
        }
    }

    #[inline]
    pub fn derivative(&self, c: T) -> T {
        match *self {
            Coefficient::Constant(_) => T::zero(),
            Coefficient::Rational { lo, hi } => {
                let d = T::one() + c * c;
                -(hi - lo) * T::lit(2.0) * c / (d * d)
            }
        }
    }

    pub fn inf(&self) -> T {
        match *self {
            Coefficient::Constant(v) => v,
            Coefficient::Rational { lo, hi } => lo.min(hi),
        }
    }

    pub fn sup(&self) -> T {
        match *self {
            Coefficient::Constant(v) => v,
            Coefficient::Rational { lo, hi } => lo.max(hi),
        }
    }

    /// Parses `constant:V` or `rational:LO,HI`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("viscosity spec `{spec}`: expected `constant:V` or `rational:LO,HI`"));
        let (kind, args) = spec.trim().trim_matches('"').split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        match (kind.trim(), nums.as_slice()) {
            ("constant", [v]) => Ok(Coefficient::Constant(T::lit(*v))),
            ("rational", [lo, hi]) => Ok(Coefficient::Rational {
                lo: T::lit(*lo),
                hi: T::lit(*hi),
            }),
            _ => Err(bad()),
        }
    }
}

impl<T: Real> std::fmt::Display for Coefficient<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "constant:{v}"),
            Coefficient::Rational { lo, hi } => write!(f, "rational:{lo},{hi}"),
        }
    }
}

/// Shear viscosity `eta(c)` and bulk viscosity `lambda(c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityProfile<T> {
    pub eta: Coefficient<T>,
    pub lambda: Coefficient<T>,
}

impl<T: Real> ViscosityProfile<T> {
    /// Requires `0 < inf eta` and `0 <= lambda`.
    pub fn new(eta: Coefficient<T>, lambda: Coefficient<T>) -> Result<Self> {
        if !(eta.inf() > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "shear viscosity must be bounded below by a positive constant ({eta})"
            )));
        }
        if !(lambda.inf() >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "bulk viscosity must be nonnegative ({lambda})"
            )));
        }
        Ok(Self { eta, lambda })
    }

    pub fn constant(eta: T) -> Result<Self> {
        Self::new(Coefficient::Constant(eta), Coefficient::Constant(T::zero()))
    }

    /// `(eta lower, eta upper, lambda upper)`.
    pub fn bounds(&self) -> (T, T, T) {
        (self.eta.inf(), self.eta.sup(), self.lambda.sup())
    }
}

/// `p(rho) = rho^gamma` per cell.
pub fn pressure<T: Real>(rho: &ScalarField<T>, gamma: T) -> Result<ScalarField<T>> {
    for (cell, &r) in rho.values().iter().enumerate() {
        if r < T::zero() {
            return Err(Error::NegativeDensity {
                cell,
                value: r.to_f64_lossy(),
            });
        }
    }
    Ok(rho.map(|r| r.powf(gamma)))
}

/// Pointwise Newton law `eta (G + G^T - 2/3 tr(G) I) + lambda tr(G) I` for `G = grad u`.
///
/// The 3D deviatoric factor 2/3 is kept on every grid dimension.
pub fn stress_from_gradient<T: Real>(grad: &Tensor3<T>, eta: T, lambda: T) -> Tensor3<T> {
    let div = grad[0][0] + grad[1][1] + grad[2][2];
    let iso = (lambda - T::lit(2.0 / 3.0) * eta) * div;
    let mut s = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            s[a][b] = eta * (grad[a][b] + grad[b][a]);
        }
        s[a][a] += iso;
    }
    s
}

pub fn contract<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Shear rates `dy ux + dx uy` at grid corners (`(nx+1) x (ny+1)`, x fastest).
///
/// No-slip walls are realized by odd reflection of the tangential velocity.
fn corner_shear_parts<T: Real>(u: &VectorField<T>) -> (Vec<T>, Vec<T>) {
    let g = u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut dyux = vec![T::zero(); (nx + 1) * (ny + 1)];
    let mut dxuy = vec![T::zero(); (nx + 1) * (ny + 1)];
    if g.dim() < 2 {
        return (dyux, dxuy);
    }
    let (hx, hy) = (g.h(0), g.h(1));
    for jc in 0..=ny {
        for ic in 0..=nx {
            let k = jc * (nx + 1) + ic;
            if ic > 0 && ic < nx {
                let up = if jc < ny { u.x_at(ic, jc) } else { -u.x_at(ic, ny - 1) };
                let down = if jc > 0 { u.x_at(ic, jc - 1) } else { -u.x_at(ic, 0) };
                dyux[k] = (up - down) / hy;
            }
            if jc > 0 && jc < ny {
                let right = if ic < nx { u.y_at(ic, jc) } else { -u.y_at(nx - 1, jc) };
                let left = if ic > 0 { u.y_at(ic - 1, jc) } else { -u.y_at(0, jc) };
                dxuy[k] = (right - left) / hx;
            }
        }
    }
    (dyux, dxuy)
}

/// Cell-centered velocity gradients `G[a][b] = d_b u_a`.
///
/// Normal derivatives are exact face differences; cross derivatives average
/// the four surrounding corner values.
pub fn velocity_gradient<T: Real>(u: &VectorField<T>) -> Vec<Tensor3<T>> {
    let g = u.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (dyux, dxuy) = corner_shear_parts(u);
    let q = T::lit(0.25);
    let mut out = vec![[[T::zero(); 3]; 3]; g.n_cells()];
    for j in 0..ny {
        for i in 0..nx {
            let t = &mut out[g.cell_index(i, j)];
            t[0][0] = (u.x_at(i + 1, j) - u.x_at(i, j)) / g.h(0);
            if g.dim() == 2 {
                t[1][1] = (u.y_at(i, j + 1) - u.y_at(i, j)) / g.h(1);
                let c = |ic: usize, jc: usize| jc * (nx + 1) + ic;
                let corners = [c(i, j), c(i + 1, j), c(i, j + 1), c(i + 1, j + 1)];
                t[0][1] = q * corners.iter().map(|&k| dyux[k]).sum::<T>();
                t[1][0] = q * corners.iter().map(|&k| dxuy[k]).sum::<T>();
            }
        }
    }
    out
}

/// Cell-centered viscous stress with `eta(c)`, `lambda(c)` evaluated cellwise.
pub fn viscous_stress<T: Real>(c: &ScalarField<T>, u: &VectorField<T>, prof: &ViscosityProfile<T>) -> Result<Vec<Tensor3<T>>> {
    if c.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(velocity_gradient(u)
        .iter()
        .zip(c.values())
        .map(|(gu, &ck)| stress_from_gradient(gu, prof.eta.eval(ck), prof.lambda.eval(ck)))
        .collect())
}

/// Face gradient of `c` averaged to cell centers (walls contribute zero).
pub fn cell_gradient<T: Real>(c: &ScalarField<T>) -> Vec<[T; 2]> {
    gradient(c).to_cells()
}

/// Pointwise `g (x) g - |g|^2/2 I_d`.
pub fn korteweg_from_gradient<T: Real>(gc: [T; 2], dim: usize) -> Tensor3<T> {
    let half_sq = T::lit(0.5) * (gc[0] * gc[0] + gc[1] * gc[1]);
    let mut k = [[T::zero(); 3]; 3];
    for a in 0..2 {
        for b in 0..2 {
            k[a][b] = gc[a] * gc[b];
        }
    }
    for a in 0..dim {
        k[a][a] -= half_sq;
    }
    k
}

/// Capillary stress at cell centers from a face gradient of `c`.
pub fn korteweg_stress<T: Real>(grad_c: &VectorField<T>) -> Vec<Tensor3<T>> {
    let dim = grad_c.grid().dim();
    grad_c.to_cells().into_iter().map(|gc| korteweg_from_gradient(gc, dim)).collect()
}

/// Face divergence of a cell-centered symmetric tensor whose tangential
/// shear component vanishes on the walls (true for the capillary stress of
/// a Neumann field).
pub fn tensor_divergence<T: Real>(grid: &Grid<T>, t: &[Tensor3<T>]) -> Result<VectorField<T>> {
    if t.len() != grid.n_cells() {
        return Err(Error::GridMismatch);
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let q = T::lit(0.25);
    // corner values of the shear component; zero on walls
    let mut corner = vec![T::zero(); (nx + 1) * (ny + 1)];
    if grid.dim() == 2 {
        for jc in 1..ny {
            for ic in 1..nx {
                let s = t[grid.cell_index(ic - 1, jc - 1)][0][1]
                    + t[grid.cell_index(ic, jc - 1)][0][1]
                    + t[grid.cell_index(ic - 1, jc)][0][1]
                    + t[grid.cell_index(ic, jc)][0][1];
                corner[jc * (nx + 1) + ic] = q * s;
            }
        }
    }
    let mut out = VectorField::zeros(*grid);
    for (axis, f, lo, hi) in grid.faces() {
        let mut v = (t[hi][axis][axis] - t[lo][axis][axis]) / grid.h(axis);
        if grid.dim() == 2 {
            if axis == 0 {
                let (i_face, j) = (hi % nx, hi / nx);
                v += (corner[(j + 1) * (nx + 1) + i_face] - corner[j * (nx + 1) + i_face]) / grid.h(1);
            } else {
                let (i, j_face) = (hi % nx, hi / nx);
                v += (corner[j_face * (nx + 1) + i + 1] - corner[j_face * (nx + 1) + i]) / grid.h(0);
            }
        }
        out.comp_mut(axis)[f] = v;
    }
    Ok(out)
}

/// Quadratic viscous dissipation `D(u) = int S(c, grad u) : grad u` on the
/// staggered grid, and the symmetric operator `Q` with `D(u) = u^T Q u`.
///
/// Cell terms carry the normal rates with `eta(c_K)`, `lambda(c_K)`; corner
/// terms carry the shear rate with `eta` averaged over adjacent cells and
/// weights halved on each wall.
#[derive(Debug, Clone)]
pub struct ViscousForm<T> {
    grid: Grid<T>,
    eta_cell: Vec<T>,
    lambda_cell: Vec<T>,
    /// `(weight * eta, corner index)` for corners with a nonzero shear stencil.
    corner_w: Vec<(T, usize)>,
}

impl<T: Real> ViscousForm<T> {
    pub fn new(c: &ScalarField<T>, prof: &ViscosityProfile<T>) -> Self {
        let g = *c.grid();
        let eta_cell: Vec<T> = c.values().iter().map(|&v| prof.eta.eval(v)).collect();
        let lambda_cell: Vec<T> = c.values().iter().map(|&v| prof.lambda.eval(v)).collect();
        let mut corner_w = Vec::new();
        if g.dim() == 2 {
            let (nx, ny) = (g.nx(), g.ny());
            let half = T::lit(0.5);
            for jc in 0..=ny {
                for ic in 0..=nx {
                    let on_x = ic == 0 || ic == nx;
                    let on_y = jc == 0 || jc == ny;
                    if on_x && on_y {
                        continue;
                    }
                    let mut w = g.cell_volume();
                    if on_x {
                        w *= half;
                    }
                    if on_y {
                        w *= half;
                    }
                    let mut sum = T::zero();
                    let mut cnt = 0usize;
                    for (di, dj) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
                        if ic + di >= 1 && ic + di <= nx && jc + dj >= 1 && jc + dj <= ny {
                            sum += eta_cell[g.cell_index(ic + di - 1, jc + dj - 1)];
                            cnt += 1;
                        }
                    }
                    let eta_c = sum / T::from_usize_lossy(cnt);
                    corner_w.push((w * eta_c, jc * (nx + 1) + ic));
                }
            }
        }
        Self {
            grid: g,
            eta_cell,
            lambda_cell,
            corner_w,
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// Per-cell share of the dissipation (corner terms split evenly among
    /// their adjacent cells); sums to [`ViscousForm::dissipation`] up to roundoff.
    pub fn dissipation_density(&self, u: &VectorField<T>) -> Vec<T> {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let vol = g.cell_volume();
        let two = T::lit(2.0);
        let mut out = vec![T::zero(); g.n_cells()];
        for j in 0..ny {
            for i in 0..nx {
                let k = g.cell_index(i, j);
                let a = (u.x_at(i + 1, j) - u.x_at(i, j)) / g.h(0);
                let b = if g.dim() == 2 {
                    (u.y_at(i, j + 1) - u.y_at(i, j)) / g.h(1)
                } else {
                    T::zero()
                };
                let eta = self.eta_cell[k];
                let kappa = self.lambda_cell[k] - T::lit(2.0 / 3.0) * eta;
                out[k] = vol * (two * eta * (a * a + b * b) + kappa * (a + b) * (a + b));
            }
        }
        if g.dim() == 2 {
            let (dyux, dxuy) = corner_shear_parts(u);
            for &(w, k) in &self.corner_w {
                let s = dyux[k] + dxuy[k];
                let val = w * s * s;
                let (ic, jc) = (k % (nx + 1), k / (nx + 1));
                let mut cells = Vec::with_capacity(4);
                for (di, dj) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
                    if ic + di >= 1 && ic + di <= nx && jc + dj >= 1 && jc + dj <= ny {
                        cells.push(g.cell_index(ic + di - 1, jc + dj - 1));
                    }
                }
                let share = val / T::from_usize_lossy(cells.len());
                for c in cells {
                    out[c] += share;
                }
            }
        }
        out
    }

    /// `D(u)`, already multiplied by cell volumes.
    pub fn dissipation(&self, u: &VectorField<T>) -> T {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let vol = g.cell_volume();
        let two = T::lit(2.0);
        let mut total = T::zero();
        for j in 0..ny {
            for i in 0..nx {
                let k = g.cell_index(i, j);
                let a = (u.x_at(i + 1, j) - u.x_at(i, j)) / g.h(0);
                let b = if g.dim() == 2 {
                    (u.y_at(i, j + 1) - u.y_at(i, j)) / g.h(1)
                } else {
                    T::zero()
                };
                let eta = self.eta_cell[k];
                let kappa = self.lambda_cell[k] - T::lit(2.0 / 3.0) * eta;
                total += vol * (two * eta * (a * a + b * b) + kappa * (a + b) * (a + b));
            }
        }
        if g.dim() == 2 {
            let (dyux, dxuy) = corner_shear_parts(u);
            for &(w, k) in &self.corner_w {
                let s = dyux[k] + dxuy[k];
                total += w * s * s;
            }
        }
        total
    }

    /// Symmetric positive semidefinite `Q` on flattened face values (x-faces first).
    pub fn matrix(&self) -> CsrMatrix<T> {
        let g = &self.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let nfx = g.n_faces(0);
        let n = nfx + g.n_faces(1);
        let vol = g.cell_volume();
        let two = T::lit(2.0);
        let mut tb = TripletBuilder::with_capacity(n, n, 16 * n);
        let xf = |i_face: usize, j: usize| -> Option<usize> {
            (i_face > 0 && i_face < nx).then(|| g.x_face(i_face, j))
        };
        let yf = |i: usize, j_face: usize| -> Option<usize> {
            (g.dim() == 2 && j_face > 0 && j_face < ny).then(|| nfx + g.y_face(i, j_face))
        };
        let add_outer = |tb: &mut TripletBuilder<T>, terms: &[(usize, T)], w: T| {
            for &(p, cp) in terms {
                for &(q, cq) in terms {
                    tb.push(p, q, w * cp * cq);
                }
            }
        };
        for j in 0..ny {
            for i in 0..nx {
                let k = g.cell_index(i, j);
                let eta = self.eta_cell[k];
                let kappa = self.lambda_cell[k] - T::lit(2.0 / 3.0) * eta;
                let ihx = T::one() / g.h(0);
                let mut a = Vec::with_capacity(2);
                if let Some(f) = xf(i + 1, j) {
                    a.push((f, ihx));
                }
                if let Some(f) = xf(i, j) {
                    a.push((f, -ihx));
                }
                let mut b = Vec::with_capacity(2);
                if g.dim() == 2 {
                    let ihy = T::one() / g.h(1);
                    if let Some(f) = yf(i, j + 1) {
                        b.push((f, ihy));
                    }
                    if let Some(f) = yf(i, j) {
                        b.push((f, -ihy));
                    }
                }
                // 2 eta (a^2 + b^2) + kappa (a + b)^2
                add_outer(&mut tb, &a, vol * two * eta);
                add_outer(&mut tb, &b, vol * two * eta);
                let ab: Vec<(usize, T)> = a.iter().chain(&b).copied().collect();
                add_outer(&mut tb, &ab, vol * kappa);
            }
        }
        if g.dim() == 2 {
            let (ihx, ihy) = (T::one() / g.h(0), T::one() / g.h(1));
            for &(w, k) in &self.corner_w {
                let (ic, jc) = (k % (nx + 1), k / (nx + 1));
                let mut s: Vec<(usize, T)> = Vec::with_capacity(4);
                if ic > 0 && ic < nx {
                    if jc < ny {
                        s.push((g.x_face(ic, jc), ihy));
                    } else {
                        s.push((g.x_face(ic, ny - 1), -ihy));
                    }
                    if jc > 0 {
                        s.push((g.x_face(ic, jc - 1), -ihy));
                    } else {
                        s.push((g.x_face(ic, 0), ihy));
                    }
                }
                if jc > 0 && jc < ny {
                    if ic < nx {
                        s.push((nfx + g.y_face(ic, jc), ihx));
                    } else {
                        s.push((nfx + g.y_face(nx - 1, jc), -ihx));
                    }
                    if ic > 0 {
                        s.push((nfx + g.y_face(ic - 1, jc), -ihx));
                    } else {
                        s.push((nfx + g.y_face(0, jc), ihx));
                    }
                }
                add_outer(&mut tb, &s, w);
            }
        }
        tb.build()
    }
}

/// Pointwise energy density and the flag for states where `F` is undefined.
#[derive(Debug, Clone)]
pub struct EnergyDensity<T> {
    pub kinetic: Vec<T>,
    pub elastic: Vec<T>,
    pub mixing: Vec<T>,
    pub gradient: Vec<T>,
    /// Cells with `rho > 0` and `|c| > 1` under the unregularized `F`.
    pub singular_cells: Vec<usize>,
}

impl<T: Real> EnergyDensity<T> {
    pub fn total_cell(&self, k: usize) -> T {
        self.kinetic[k] + self.elastic[k] + self.mixing[k] + self.gradient[k]
    }

    /// `int e dx`, or `+inf` when singular.
    pub fn integral(&self, vol: T) -> T {
        if !self.singular_cells.is_empty() {
            return T::infinity();
        }
        let s: T = (0..self.kinetic.len()).map(|k| self.total_cell(k)).sum();
        s * vol
    }
}

/// Which entropy to use in the energy density.
#[derive(Debug, Clone, Copy)]
pub enum Entropy<'a, T> {
    /// The singular `F`, with `rho F(c) = 0` where `rho = 0`.
    Exact,
    Regularized(&'a RegularizedPotential<T>),
}

/// `1/2 rho |u|^2 + rho^gamma/(gamma-1) + rho F(c) - theta0/2 rho c^2 + 1/2 |grad c|^2` per cell.
///
/// `|u|^2` and `|grad c|^2` are the cell averages of squared face values, so
/// their cell sums equal the corresponding face sums.
pub fn energy_density<T: Real>(
    rho: &ScalarField<T>,
    u: &VectorField<T>,
    c: &ScalarField<T>,
    params: &PotentialParams<T>,
    entropy: Entropy<'_, T>,
) -> Result<EnergyDensity<T>> {
    if rho.grid() != u.grid() || rho.grid() != c.grid() {
        return Err(Error::GridMismatch);
    }
    let half = T::lit(0.5);
    let u2 = u.squared_to_cells();
    let g2 = gradient(c).squared_to_cells();
    let n = rho.values().len();
    let mut out = EnergyDensity {
        kinetic: Vec::with_capacity(n),
        elastic: Vec::with_capacity(n),
        mixing: Vec::with_capacity(n),
        gradient: g2.iter().map(|&v| half * v).collect(),
        singular_cells: Vec::new(),
    };
    for (k, (&r, &ck)) in rho.values().iter().zip(c.values()).enumerate() {
        if r < T::zero() {
            return Err(Error::NegativeDensity {
                cell: k,
                value: r.to_f64_lossy(),
            });
        }
        out.kinetic.push(half * r * u2[k]);
        out.elastic.push(r.powf(params.gamma) / (params.gamma - T::one()));
        let mix = if r > T::zero() {
            let f = match entropy {
                Entropy::Exact => match flory_huggins(ck, params.theta) {
                    Ok(v) => v,
                    Err(_) => {
                        out.singular_cells.push(k);
                        T::infinity()
                    }
                },
                Entropy::Regularized(reg) => reg.value(ck),
            };
            r * f - half * params.theta0 * r * ck * ck
        } else {
            T::zero()
        };
        out.mixing.push(mix);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarBc;

    #[test]
    fn parse_profiles() {
        assert_eq!(Coefficient::<f64>::parse("constant:1.0").unwrap(), Coefficient::Constant(1.0));
        assert_eq!(
            Coefficient::<f64>::parse("\"rational:0.5,2.0\"").unwrap(),
            Coefficient::Rational { lo: 0.5, hi: 2.0 }
        );
        assert!(Coefficient::<f64>::parse("cubic:1").is_err());
        assert!(Coefficient::<f64>::parse("constant:1,2").is_err());
        assert!(ViscosityProfile::new(Coefficient::Constant(0.0), Coefficient::Constant(0.0)).is_err());
        assert!(ViscosityProfile::new(Coefficient::Constant(1.0), Coefficient::Constant(-0.1)).is_err());
    }

    #[test]
    fn pressure_values() {
        let g = Grid::new_1d(3, 1.0f64).unwrap();
        let rho = ScalarField::new(g, vec![0.0, 1.0, 2.0], ScalarBc::NeumannZero).unwrap();
        let p = pressure(&rho, 5.0 / 3.0).unwrap();
        assert_eq!(p.values()[0], 0.0);
        assert_eq!(p.values()[1], 1.0);
        assert!((p.values()[2] - 3.174_802_103_936_399).abs() < 1e-14);
        let neg = ScalarField::new(g, vec![1.0, -1e-3, 1.0], ScalarBc::NeumannZero).unwrap();
        assert!(matches!(pressure(&neg, 2.0), Err(Error::NegativeDensity { cell: 1, .. })));
    }

    #[test]
    fn stress_trace_and_korteweg_trace() {
        let gu: Tensor3<f64> = [[0.3, -1.2, 0.0], [0.7, 2.0, 0.0], [0.0, 0.0, 0.0]];
        let s = stress_from_gradient(&gu, 1.5, 0.25);
        let tr = s[0][0] + s[1][1] + s[2][2];
        assert!((tr - 3.0 * 0.25 * 2.3).abs() < 1e-14);
        assert_eq!(s[0][1], s[1][0]);
        let k = korteweg_from_gradient([0.4f64, -0.9], 2);
        assert!((k[0][0] + k[1][1] + k[2][2]).abs() < 1e-15);
        let k1 = korteweg_from_gradient([0.4f64, 0.0], 1);
        assert!((k1[0][0] - 0.08).abs() < 1e-15);
    }

    #[test]
    fn viscous_matrix_reproduces_dissipation() {
        let g = Grid::new_2d([5, 4], [1.0f64, 0.8]).unwrap();
        let c = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x, y| (3.0 * x).sin() * y);
        let prof = ViscosityProfile::new(Coefficient::Rational { lo: 0.5, hi: 2.0 }, Coefficient::Constant(0.3)).unwrap();
        let form = ViscousForm::new(&c, &prof);
        let u = VectorField::from_fn(g, |x, y| [(5.0 * x + y).sin(), (x * y).cos() - 0.4]);
        let q = form.matrix();
        let flat = u.to_flat();
        let quad: f64 = flat.iter().zip(q.matvec(&flat)).map(|(a, b)| a * b).sum();
        let d = form.dissipation(&u);
        assert!((quad - d).abs() < 1e-12 * d.abs(), "{quad} vs {d}");
        let dens: f64 = form.dissipation_density(&u).iter().sum();
        assert!((dens - d).abs() < 1e-12 * d);
        for r in 0..q.nrows() {
            for (cidx, v) in q.row(r) {
                assert!((v - q.get(cidx, r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_dimensional_dissipation_is_four_thirds_eta() {
        let g = Grid::new_1d(6, 1.2).unwrap();
        let c = ScalarField::constant(g, 0.0, ScalarBc::NeumannZero);
        let prof = ViscosityProfile::new(Coefficient::Constant(0.7), Coefficient::Constant(0.1)).unwrap();
        let u = VectorField::from_fn(g, |x, _| [x * (1.2 - x), 0.0]);
        let expect: f64 = (0..6)
            .map(|i| {
                let a = (u.x_at(i + 1, 0) - u.x_at(i, 0)) / g.h(0);
                g.cell_volume() * (4.0 / 3.0 * 0.7 + 0.1) * a * a
            })
            .sum();
        let d = ViscousForm::new(&c, &prof).dissipation(&u);
        assert!((d - expect).abs() < 1e-14);
    }

    #[test]
    fn uniform_energy_example() {
        let g = Grid::new_1d(8, 1.0).unwrap();
        let rho = ScalarField::constant(g, 1.0, ScalarBc::NeumannZero);
        let c = ScalarField::constant(g, 0.5, ScalarBc::NeumannZero);
        let u = VectorField::zeros(g);
        let p = PotentialParams::new(1.0, 2.0, 2.0).unwrap();
        let e = energy_density(&rho, &u, &c, &p, Entropy::Exact).unwrap();
        let fh = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln());
        assert!((e.integral(g.cell_volume()) - (1.0 + fh - 0.25)).abs() < 1e-14);
        let c2 = ScalarField::constant(g, 1.2, ScalarBc::NeumannZero);
        let e2 = energy_density(&rho, &u, &c2, &p, Entropy::Exact).unwrap();
        assert_eq!(e2.singular_cells.len(), 8);
        assert!(e2.integral(g.cell_volume()).is_infinite());
    }

    #[test]
    fn vacuum_energy_is_gradient_only() {
        let g = Grid::new_1d(16, 1.0).unwrap();
        let rho = ScalarField::constant(g, 0.0, ScalarBc::NeumannZero);
        let c = ScalarField::from_fn(g, ScalarBc::NeumannZero, |x, _| (std::f64::consts::PI * x).cos());
        let p = PotentialParams::new(1.0, 2.0, 2.0).unwrap();
        let e = energy_density(&rho, &VectorField::zeros(g), &c, &p, Entropy::Exact).unwrap();
        let grad = gradient(&c);
        let expect = 0.5 * grad.inner(&grad).unwrap();
        assert!((e.integral(g.cell_volume()) - expect).abs() < 1e-13);
    }
}
